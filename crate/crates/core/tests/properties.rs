//! Property and oracle tests for task generation and the analysis toolkit.

use std::collections::HashMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

use philab_core::analysis::coder::{arithmetic_code_length, decode, encode};
use philab_core::analysis::{
    bin_and_stratify, bootstrap_mean_ci, description_length_report, histogram2d, partial_correlation, TokenRecord,
};
use philab_core::rng::{stream, Purpose};
use philab_core::tasks::{
    build_sequence, perturb_tokens, pfa_complexity, sample_example, sample_pfa, sample_task_mixture, DataConfig, Edge,
    FixedPools, Mode, Pfa, PfaRanges, Task,
};

fn rng(i: u64) -> philab_core::rng::Rng {
    stream(77, Purpose::EvalData, i)
}

#[test]
fn sampled_automata_satisfy_invariants() {
    let ranges = PfaRanges::default();
    let mut r = rng(0);
    let mut seen_states = [0usize; 13];
    for _ in 0..10_000 {
        let pfa = sample_pfa(&mut r, &ranges).unwrap();
        let n = pfa.num_states;
        assert!((3..=12).contains(&n));
        assert!((4..=18).contains(&pfa.vocab_len()));
        seen_states[n] += 1;
        let adj = pfa.adjacency();
        for out in &adj {
            assert!((1..=4).contains(&out.len()));
            let mut toks: Vec<u32> = out.iter().map(|e| e.token()).collect();
            toks.sort_unstable();
            toks.dedup();
            assert_eq!(toks.len(), out.len(), "outgoing tokens are distinct");
        }
        for e in &pfa.edges {
            assert!(pfa.token_subset.contains(&e.token()));
            assert!(e.target() < n);
        }
    }
    assert!(seen_states[3..=12].iter().all(|&c| c > 0), "{seen_states:?}");
}

proptest! {
    #[test]
    fn complexity_increases_in_edges_and_states(n in 2usize..30, m in 1usize..200, v in 1usize..18) {
        let bits = |n, m| philab_core::tasks::description_bits(n, m, v, 18).unwrap();
        prop_assert!(bits(n, m + 1) > bits(n, m));
        prop_assert!(bits(n + 1, m) > bits(n, m));
    }

    #[test]
    fn perturbation_changes_at_most_the_quota(
        tokens in prop::collection::vec(0u32..18, 0..80),
        rate in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let alphabet: Vec<u32> = (0..18).collect();
        let out = perturb_tokens(&tokens, rate, &mut stream(seed, Purpose::TrainData, 0), &alphabet);
        prop_assert_eq!(out.len(), tokens.len());
        let diff = out.iter().zip(&tokens).filter(|(a, b)| a != b).count();
        prop_assert!(diff <= (rate * tokens.len() as f64).floor() as usize);
    }

    #[test]
    fn generated_sequences_respect_layout(seed in any::<u64>(), which in 0usize..5, train in any::<bool>()) {
        let cfg = DataConfig { examples_per_seq: [3, 6], ..DataConfig::default() };
        let pools = FixedPools::new(&cfg).unwrap();
        let task = Task::ALL[which];
        let mode = if train { Mode::Train } else { Mode::Eval };
        let s = build_sequence(task, Some(&pools), &mut stream(seed, Purpose::TrainData, 0), &cfg, mode).unwrap();
        s.validate(&cfg).unwrap();
        prop_assert_eq!(s.task, task);
        prop_assert!(s.tokens.iter().all(|&t| (t as usize) < cfg.vocab_size()));
        if task == Task::Copy {
            let mut counts: HashMap<&[u32], usize> = HashMap::new();
            for &(a, b) in &s.spans {
                *counts.entry(&s.tokens[a..b]).or_default() += 1;
            }
            prop_assert!(counts.values().all(|&c| c % 2 == 0), "{:?}", counts);
            for pair in s.spans.chunks(2) {
                prop_assert_eq!(&s.tokens[pair[0].0..pair[0].1], &s.tokens[pair[1].0..pair[1].1]);
            }
        }
    }
}

#[test]
fn perturbation_edge_rates() {
    let toks: Vec<u32> = (0..50).map(|i| i % 7).collect();
    assert_eq!(perturb_tokens(&toks, 0.0, &mut rng(1), &[3, 4]), toks);
    assert!(perturb_tokens(&toks, 1.0, &mut rng(2), &[5]).iter().all(|&t| t == 5));
    let out = perturb_tokens(&toks, 0.2, &mut rng(3), &(0..18).collect::<Vec<_>>());
    assert!(out.iter().zip(&toks).filter(|(a, b)| a != b).count() <= 10);
}

/// Ergodic three-state automaton with a self-loop.
fn markov_pfa() -> Pfa {
    let edges = vec![
        Edge(0, 0, 1),
        Edge(0, 1, 2),
        Edge(1, 2, 0),
        Edge(1, 0, 2),
        Edge(1, 3, 1),
        Edge(2, 3, 0),
        Edge(2, 1, 2),
    ];
    Pfa::new(3, edges, vec![0, 1, 2, 3]).unwrap()
}

#[test]
fn walk_frequencies_match_the_chain() {
    let pfa = markov_pfa();
    let adj = pfa.adjacency();
    let n = pfa.num_states;
    // stationary distribution by power iteration on the exact transition matrix
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for (s, out) in adj.iter().enumerate() {
            for e in out {
                next[e.target()] += pi[s] / out.len() as f64;
            }
        }
        pi = next;
    }
    let mut unigram = [0.0f64; 4];
    let mut bigram = [[0.0f64; 4]; 4];
    for (s, out) in adj.iter().enumerate() {
        for e in out {
            let pe = pi[s] / out.len() as f64;
            unigram[e.token() as usize] += pe;
            let after = &adj[e.target()];
            for f in after {
                bigram[e.token() as usize][f.token() as usize] += pe / after.len() as f64;
            }
        }
    }

    let walk = sample_example(&pfa, &mut rng(4), [100_000, 100_000]);
    let total = walk.len() as f64;
    let mut uni = [0.0f64; 4];
    let mut bi = [[0.0f64; 4]; 4];
    for w in walk.windows(2) {
        bi[w[0] as usize][w[1] as usize] += 1.0 / (total - 1.0);
    }
    for &t in &walk {
        uni[t as usize] += 1.0 / total;
    }
    for a in 0..4 {
        assert!((uni[a] - unigram[a]).abs() < 0.01, "unigram {a}: {} vs {}", uni[a], unigram[a]);
        for b in 0..4 {
            assert!((bi[a][b] - bigram[a][b]).abs() < 0.01, "bigram {a}{b}");
        }
    }
    // conditional next-token law given the current token, where it is defined
    for a in 0..4 {
        let row: f64 = bigram[a].iter().sum();
        let emp: f64 = bi[a].iter().sum();
        for b in 0..4 {
            if row > 0.05 {
                assert!((bi[a][b] / emp - bigram[a][b] / row).abs() < 0.02);
            }
        }
    }
}

#[test]
fn mixture_frequencies_are_uniform() {
    let cfg = DataConfig {
        examples_per_seq: [2, 2],
        example_len: [10, 10],
        ..DataConfig::default()
    };
    let pools = FixedPools::new(&cfg).unwrap();
    let mut r = rng(5);
    let mut counts: HashMap<Task, usize> = HashMap::new();
    let draws = 10_000;
    for _ in 0..draws {
        let s = sample_task_mixture(&mut r, Some(&pools), &cfg, &Task::FOUR, Mode::Train).unwrap();
        *counts.entry(s.task).or_default() += 1;
    }
    for t in Task::FOUR {
        let f = counts[&t] as f64 / draws as f64;
        assert!((f - 0.25).abs() < 0.02, "{t}: {f}");
    }
}

#[test]
fn complexity_of_sampled_automata_is_consistent() {
    let mut r = rng(6);
    for _ in 0..200 {
        let pfa = sample_pfa(&mut r, &PfaRanges::default()).unwrap();
        let c = pfa_complexity(&pfa, 18).unwrap();
        let again = philab_core::tasks::description_bits(pfa.num_states, pfa.edges.len(), pfa.vocab_len(), 18).unwrap();
        assert_eq!(c, again);
        assert!(c > 0.0);
    }
}

// ---- arithmetic coder ----

fn random_dist(r: &mut philab_core::rng::Rng, k: usize) -> Vec<f64> {
    let style = r.random_range(0..3);
    let mut w: Vec<f64> = (0..k)
        .map(|_| match style {
            0 => r.random::<f64>(),
            1 => r.random::<f64>().powi(8),
            _ => {
                if r.random_bool(0.4) {
                    0.0
                } else {
                    r.random::<f64>()
                }
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

fn draw(r: &mut philab_core::rng::Rng, p: &[f64]) -> u32 {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc && pi > 0.0 {
            return i as u32;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap() as u32
}

#[test]
fn coder_is_lossless_on_fuzz_cases() {
    let mut r = rng(7);
    for case in 0..10_000 {
        let k = r.random_range(1..40);
        let len = r.random_range(0..60);
        let probs: Vec<Vec<f64>> = (0..len).map(|_| random_dist(&mut r, k)).collect();
        let toks: Vec<u32> = probs.iter().map(|p| draw(&mut r, p)).collect();
        let enc = encode(&probs, &toks).unwrap();
        assert_eq!(decode(&enc, &probs).unwrap(), toks, "case {case}");
    }
}

#[test]
fn coder_is_near_ideal_on_long_sequences() {
    let mut r = rng(8);
    for len in [500usize, 1000, 3000] {
        let k = 20;
        let probs: Vec<Vec<f64>> = (0..len).map(|_| random_dist(&mut r, k)).collect();
        let toks: Vec<u32> = probs.iter().map(|p| draw(&mut r, p)).collect();
        let c = arithmetic_code_length(&probs, &toks).unwrap();
        assert!(((c.bits as f64) - c.ideal_bits).abs() <= 0.01 * c.ideal_bits, "{c:?}");
    }
}

// ---- statistics ----

fn record(seq_id: usize, t: usize, task: Task, c: Option<f64>, nll: f64, phi: f64) -> TokenRecord {
    TokenRecord {
        run_id: "r".into(),
        seq_id,
        t,
        task,
        complexity_bits: c,
        nll_nats: nll,
        phi_nats: phi,
    }
}

fn complexity_records(r: &mut philab_core::rng::Rng, n_seq: usize) -> Vec<TokenRecord> {
    let mut out = Vec::new();
    for s in 0..n_seq {
        let c = r.random_range(10.0..200.0);
        for t in 2..12 {
            out.push(record(s, t, Task::Icll, Some(c), r.random_range(0.0..3.0), r.random_range(0.0..5.0)));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn binning_ignores_record_order(seed in any::<u64>()) {
        let mut r = stream(seed, Purpose::EvalData, 0);
        let mut recs = complexity_records(&mut r, 40);
        let a = bin_and_stratify(&recs, 10, 10).unwrap();
        recs.shuffle(&mut r);
        let b = bin_and_stratify(&recs, 10, 10).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn partial_correlation_is_affine_invariant(
        seed in any::<u64>(),
        sx in 0.01f64..100.0, sy in 0.01f64..100.0, sc in 0.01f64..100.0,
        ox in -50.0f64..50.0, oy in -50.0f64..50.0, oc in -50.0f64..50.0,
    ) {
        let mut r = stream(seed, Purpose::EvalData, 1);
        let n = 200;
        let c: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = c.iter().map(|v| v + r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| 0.5 * a - b + r.random_range(-1.0..1.0)).collect();
        let base = partial_correlation(&x, &y, &c).unwrap();
        let t = |v: &[f64], s: f64, o: f64| v.iter().map(|a| s * a + o).collect::<Vec<_>>();
        let moved = partial_correlation(&t(&x, sx, ox), &t(&y, sy, oy), &t(&c, sc, oc)).unwrap();
        prop_assert!((base.r - moved.r).abs() < 1e-12, "{} vs {}", base.r, moved.r);
    }
}

#[test]
fn bin_counts_are_deciles() {
    let recs = complexity_records(&mut rng(9), 103);
    let s = bin_and_stratify(&recs, 10, 10).unwrap();
    let n = recs.len();
    for b in 0..10 {
        let total: usize = (0..10).map(|l| s.cell(b, l).0).sum();
        assert!(total.abs_diff(n / 10) <= 1, "bin {b}: {total}");
    }
}

#[test]
fn intervals_nest_as_level_grows() {
    let mut r = rng(10);
    let units: Vec<Vec<f64>> = (0..60).map(|_| vec![r.random_range(0.0..1.0)]).collect();
    let mut prev = bootstrap_mean_ci(&units, 2000, 0.5, 3).unwrap();
    for level in [0.8, 0.9, 0.95, 0.99, 0.999] {
        let ci = bootstrap_mean_ci(&units, 2000, level, 3).unwrap();
        assert!(ci.lo <= prev.lo && ci.hi >= prev.hi, "{level}");
        prev = ci;
    }
}

#[test]
fn histogram_counts_follow_poisson_bounds() {
    let mut r = rng(11);
    let pts: Vec<(f64, f64)> = (0..40_000).map(|_| (r.random_range(0.0..4.0), r.random_range(0.0..2.0))).collect();
    let h = histogram2d(&pts, (0.0, 4.0), (0.0, 2.0), (8, 5)).unwrap();
    assert_eq!(h.total(), 40_000);
    let expected = 40_000.0 / 40.0;
    for &c in &h.counts {
        assert!((c as f64 - expected).abs() <= 3.0 * expected.sqrt(), "{c}");
    }
    let one = histogram2d(&[(1.0, 1.0)], (0.0, 4.0), (0.0, 2.0), (8, 5)).unwrap();
    assert_eq!(one.counts.iter().filter(|&&c| c > 0).count(), 1);
}

#[test]
fn description_length_replays_the_log() {
    let mut r = rng(12);
    let recs: Vec<TokenRecord> = (2..300)
        .map(|t| record(0, t, Task::Random, None, r.random_range(0.0..4.0), r.random_range(0.0..2.0)))
        .collect();
    // serialize and re-read, then sum independently
    let text: String = recs.iter().map(|x| serde_json::to_string(x).unwrap() + "\n").collect();
    let back: Vec<TokenRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let nll: f64 = back.iter().map(|x| x.nll_nats).sum();
    let phi: f64 = back.iter().map(|x| x.phi_nats).sum();
    let rep = description_length_report(&recs, Some(10)).unwrap();
    assert!((rep.tokens.nats - nll).abs() < 1e-6);
    assert!((rep.latents.nats - phi).abs() < 1e-6);
    assert!((rep.tokens.bits - rep.tokens.nats / std::f64::consts::LN_2).abs() < 1e-9);
    let (t, at) = rep.at.unwrap();
    let prefix: f64 = recs.iter().filter(|x| x.t < 10).map(|x| x.phi_nats).sum();
    assert_eq!(t, 10);
    assert!((at.nats - (recs[8].nll_nats + prefix)).abs() < 1e-9);

    let single = description_length_report(&recs[..1], None).unwrap();
    assert_eq!(single.tokens.nats, recs[0].nll_nats);
}

#[test]
fn copy_rows_split_first_and_second_occurrences() {
    use philab_core::analysis::figures::{copy_rows, AnalysisConfig};

    let cfg = DataConfig::default();
    let mut r = rng(40);
    let mut dataset = Vec::new();
    let mut recs = Vec::new();
    for seq_id in 0..12 {
        let task = if seq_id % 2 == 0 { Task::Copy } else { Task::Random };
        let s = build_sequence(task, None, &mut r, &cfg, Mode::Eval).unwrap();
        for t in 2..=s.len() {
            let idx = t - 1;
            let nll = match s.spans.iter().position(|&(a, b)| a <= idx && idx < b) {
                Some(k) if task == Task::Copy && k % 2 == 0 => 3.0,
                Some(_) if task == Task::Copy => 1.0,
                _ => 5.0,
            };
            let phi = if task == Task::Copy { 2.5 } else { 2.0 };
            recs.push(record(seq_id, t, task, None, nll, phi));
        }
        dataset.push(s);
    }
    let rows = copy_rows(&recs, &dataset, &AnalysisConfig::default()).unwrap();
    let get = |label: &str| rows.iter().find(|row| row.label == label).unwrap();
    assert_eq!(get("copy_first").ci.mean, 3.0);
    assert_eq!(get("copy_second").ci.mean, 1.0);
    let paired = get("copy_first-copy_second");
    assert_eq!(paired.n_units, 6);
    assert!((paired.ci.mean - 2.0).abs() < 1e-12 && (paired.ci.lo - 2.0).abs() < 1e-12);
    assert!((get("copy-random").ci.mean - 0.5).abs() < 1e-12);

    // a copy record pointing at a non-copy sequence is a contract error
    let mut bad = recs.clone();
    bad[0].seq_id = 1;
    bad.truncate(1);
    assert!(copy_rows(&bad, &dataset, &AnalysisConfig::default()).is_err());
}
