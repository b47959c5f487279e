use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One labelled transition: `(origin, token, target)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(pub usize, pub u32, pub usize);

impl Edge {
    pub fn origin(&self) -> usize {
        self.0
    }
    pub fn token(&self) -> u32 {
        self.1
    }
    pub fn target(&self) -> usize {
        self.2
    }
}

/// A probabilistic finite automaton with uniform edge probabilities.
///
/// Outgoing edges of a state carry distinct tokens, so the automaton is
/// deterministic given the emitted token; only the choice of edge is random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pfa {
    #[serde(rename = "n")]
    pub num_states: usize,
    pub edges: Vec<Edge>,
    #[serde(rename = "subset")]
    pub token_subset: Vec<u32>,
    pub id: String,
}

/// Sampling ranges for random automata, all inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfaRanges {
    pub n_states: [usize; 2],
    pub edges_per_state: [usize; 2],
    pub pfa_vocab: [usize; 2],
    pub total_vocab: usize,
}

impl Default for PfaRanges {
    fn default() -> Self {
        Self {
            n_states: [3, 12],
            edges_per_state: [1, 4],
            pfa_vocab: [4, 18],
            total_vocab: 18,
        }
    }
}

impl PfaRanges {
    pub fn validate(&self) -> Result<()> {
        check_range("data.n_states", self.n_states)?;
        check_range("data.edges_per_state", self.edges_per_state)?;
        check_range("data.pfa_vocab", self.pfa_vocab)?;
        if self.pfa_vocab[1] > self.total_vocab {
            return Err(Error::config(
                "data.pfa_vocab",
                format!("max {} exceeds total vocabulary {}", self.pfa_vocab[1], self.total_vocab),
            ));
        }
        if self.edges_per_state[1] > self.pfa_vocab[0] {
            return Err(Error::config(
                "data.edges_per_state",
                format!(
                    "max {} exceeds the smallest token subset {}; outgoing tokens must be distinct",
                    self.edges_per_state[1], self.pfa_vocab[0]
                ),
            ));
        }
        Ok(())
    }
}

pub(crate) fn check_range(path: &str, r: [usize; 2]) -> Result<()> {
    if r[0] == 0 {
        return Err(Error::config(path, "range minimum must be at least 1"));
    }
    if r[0] > r[1] {
        return Err(Error::config(path, format!("range [{}, {}] has min > max", r[0], r[1])));
    }
    Ok(())
}

impl Pfa {
    /// Builds an automaton from parts, checking structural invariants and
    /// assigning a content-derived id.
    pub fn new(num_states: usize, mut edges: Vec<Edge>, mut token_subset: Vec<u32>) -> Result<Self> {
        token_subset.sort_unstable();
        token_subset.dedup();
        edges.sort_unstable();
        let mut out_degree = vec![0usize; num_states];
        for e in &edges {
            if e.origin() >= num_states || e.target() >= num_states {
                return Err(Error::Domain(format!("edge {:?} references a state outside 0..{num_states}", e)));
            }
            if token_subset.binary_search(&e.token()).is_err() {
                return Err(Error::Domain(format!("edge {:?} uses a token outside the subset", e)));
            }
            out_degree[e.origin()] += 1;
        }
        if let Some(s) = out_degree.iter().position(|&d| d == 0) {
            return Err(Error::Domain(format!("state {s} has no outgoing edge")));
        }
        let mut pfa = Pfa {
            num_states,
            edges,
            token_subset,
            id: String::new(),
        };
        pfa.id = pfa.content_hash();
        Ok(pfa)
    }

    fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_states as u64).to_le_bytes());
        for e in &self.edges {
            h.update((e.0 as u64).to_le_bytes());
            h.update(e.1.to_le_bytes());
            h.update((e.2 as u64).to_le_bytes());
        }
        for t in &self.token_subset {
            h.update(t.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vocab_len(&self) -> usize {
        self.token_subset.len()
    }

    /// Outgoing edges grouped by origin state.
    pub fn adjacency(&self) -> Vec<Vec<Edge>> {
        let mut adj = vec![Vec::new(); self.num_states];
        for e in &self.edges {
            adj[e.origin()].push(*e);
        }
        adj
    }

    /// Description length in bits; see [`description_bits`].
    pub fn complexity_bits(&self, total_vocab: usize) -> Result<f64> {
        pfa_complexity(self, total_vocab)
    }
}

pub fn sample_pfa(rng: &mut Rng, ranges: &PfaRanges) -> Result<Pfa> {
    ranges.validate()?;
    let n = rng.random_range(ranges.n_states[0]..=ranges.n_states[1]);
    let v = rng.random_range(ranges.pfa_vocab[0]..=ranges.pfa_vocab[1]);
    let mut subset: Vec<u32> = index::sample(rng, ranges.total_vocab, v)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    subset.sort_unstable();

    let max_edges = ranges.edges_per_state[1].min(v);
    let mut edges = Vec::new();
    for origin in 0..n {
        let k = rng.random_range(ranges.edges_per_state[0]..=max_edges);
        for ti in index::sample(rng, v, k) {
            let target = rng.random_range(0..n);
            edges.push(Edge(origin, subset[ti], target));
        }
    }
    Pfa::new(n, edges, subset)
}

/// `log2 C(V, v) + m (2 log2 n + log2 v)`: bits to pick the token subset and
/// then list `m` edges by origin, target, and token.
pub fn description_bits(n: usize, m: usize, v: usize, total_vocab: usize) -> Result<f64> {
    if v > total_vocab {
        return Err(Error::Domain(format!("token subset {v} larger than vocabulary {total_vocab}")));
    }
    if n == 0 || v == 0 {
        return Err(Error::Domain("automaton needs at least one state and one token".into()));
    }
    Ok(log2_binomial(total_vocab, v) + edge_bits(n, m, v))
}

/// The edge-listing part of [`description_bits`]: `m (2 log2 n + log2 v)`.
pub fn edge_bits(n: usize, m: usize, v: usize) -> f64 {
    m as f64 * (2.0 * (n as f64).log2() + (v as f64).log2())
}

pub fn pfa_complexity(pfa: &Pfa, total_vocab: usize) -> Result<f64> {
    description_bits(pfa.num_states, pfa.num_edges(), pfa.vocab_len(), total_vocab)
}

fn log2_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        // c * (n - k + i) / i is exact at every step: c = C(n - k + i - 1, i - 1)
        match c.checked_mul((n - k + i) as u128) {
            Some(p) => c = p / i as u128,
            None => {
                return (1..=k).map(|i| ((n - k + i) as f64 / i as f64).log2()).sum();
            }
        }
    }
    (c as f64).log2()
}

/// Walks the automaton from a uniformly random state, choosing uniformly
/// among outgoing edges at each step.
pub fn sample_example(pfa: &Pfa, rng: &mut Rng, length_range: [usize; 2]) -> Vec<u32> {
    let adj = pfa.adjacency();
    let len = rng.random_range(length_range[0]..=length_range[1]);
    let mut state = rng.random_range(0..pfa.num_states);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let outgoing = &adj[state];
        let e = outgoing[rng.random_range(0..outgoing.len())];
        out.push(e.token());
        state = e.target();
    }
    out
}

/// Replaces exactly `floor(rate * len)` distinct positions with tokens drawn
/// uniformly from `alphabet`.
pub fn perturb_tokens(tokens: &[u32], rate: f64, rng: &mut Rng, alphabet: &[u32]) -> Vec<u32> {
    let mut out = tokens.to_vec();
    let count = ((rate.clamp(0.0, 1.0) * tokens.len() as f64).floor() as usize).min(tokens.len());
    if count == 0 || alphabet.is_empty() {
        return out;
    }
    for pos in index::sample(rng, tokens.len(), count) {
        out[pos] = alphabet[rng.random_range(0..alphabet.len())];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn rng(i: u64) -> Rng {
        stream(42, Purpose::Pools, i)
    }

    #[test]
    fn degenerate_ranges_force_shape() {
        let r = PfaRanges {
            n_states: [3, 3],
            edges_per_state: [1, 1],
            pfa_vocab: [4, 4],
            total_vocab: 18,
        };
        let p = sample_pfa(&mut rng(0), &r).unwrap();
        assert_eq!(p.num_states, 3);
        assert_eq!(p.num_edges(), 3);
        assert_eq!(p.vocab_len(), 4);
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = PfaRanges::default();
        assert_eq!(sample_pfa(&mut rng(5), &r).unwrap(), sample_pfa(&mut rng(5), &r).unwrap());
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let r = PfaRanges {
            n_states: [12, 3],
            ..Default::default()
        };
        match sample_pfa(&mut rng(0), &r) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "data.n_states"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn complexity_reference_values() {
        assert_eq!(description_bits(1, 1, 1, 1).unwrap(), 0.0);
        // log2(3060) + 3 * (2 log2 3 + 2)
        let bits = description_bits(3, 3, 4, 18).unwrap();
        assert!((bits - 27.089).abs() < 5e-4, "{bits}");
        assert_eq!(edge_bits(3, 6, 4), 2.0 * edge_bits(3, 3, 4));
        assert_eq!(bits, log2_binomial(18, 4) + edge_bits(3, 3, 4));
        assert!(matches!(description_bits(3, 3, 19, 18), Err(Error::Domain(_))));
    }

    #[test]
    fn log2_binomial_matches_float_sum() {
        for n in 1..40 {
            for k in 0..=n {
                let exact = log2_binomial(n, k);
                let approx: f64 = (1..=k).map(|i| ((n - k + i) as f64 / i as f64).log2()).sum();
                assert!((exact - approx).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ring_walk_alternates() {
        let p = Pfa::new(2, vec![Edge(0, 3, 1), Edge(1, 7, 0)], vec![3, 7]).unwrap();
        for seed in 0..20 {
            let ex = sample_example(&p, &mut rng(seed), [10, 50]);
            assert!((10..=50).contains(&ex.len()));
            for w in ex.windows(2) {
                assert_ne!(w[0], w[1]);
            }
        }
    }

    #[test]
    fn perturbation_edge_cases() {
        let toks: Vec<u32> = (0..50).map(|i| i % 18).collect();
        assert_eq!(perturb_tokens(&toks, 0.0, &mut rng(1), &[1, 2]), toks);
        assert!(perturb_tokens(&toks, 1.0, &mut rng(1), &[9]).iter().all(|&t| t == 9));
        let p = perturb_tokens(&toks, 0.2, &mut rng(1), &[0, 1, 2, 3]);
        let diff = toks.iter().zip(&p).filter(|(a, b)| a != b).count();
        assert!(diff <= 10);
    }

    #[test]
    fn dead_end_states_are_rejected() {
        assert!(Pfa::new(2, vec![Edge(0, 1, 1)], vec![1]).is_err());
    }
}
