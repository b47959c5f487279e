//! Synthetic task suite.
//!
//! Every sequence is a list of examples joined by a single separator token.
//! Content tokens are `0..total_vocab`; `PAD = total_vocab` and
//! `SEP = total_vocab + 1` are reserved.

mod pfa;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use crate::fsio::{read_jsonl, write_jsonl};
pub use pfa::{
    description_bits, edge_bits, perturb_tokens, pfa_complexity, sample_example, sample_pfa, Edge, Pfa, PfaRanges,
};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, Rng};
use pfa::check_range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MemSeq,
    MemProg,
    Icll,
    Random,
    Copy,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::MemSeq, Task::MemProg, Task::Icll, Task::Random, Task::Copy];
    pub const FOUR: [Task; 4] = [Task::MemSeq, Task::MemProg, Task::Icll, Task::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::MemSeq => "mem_seq",
            Task::MemProg => "mem_prog",
            Task::Icll => "icll",
            Task::Random => "random",
            Task::Copy => "copy",
        }
    }

    pub fn has_complexity(self) -> bool {
        matches!(self, Task::MemProg | Task::Icll)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Half of the examples are perturbed.
    Train,
    /// No perturbation.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Number of content tokens `V`.
    pub total_vocab: usize,
    pub n_states: [usize; 2],
    pub edges_per_state: [usize; 2],
    pub pfa_vocab: [usize; 2],
    pub example_len: [usize; 2],
    pub examples_per_seq: [usize; 2],
    pub perturb_rate: f64,
    /// Fraction of examples perturbed in training mode.
    pub perturb_fraction: f64,
    pub pool_size: usize,
    pub pool_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            total_vocab: 18,
            n_states: [3, 12],
            edges_per_state: [1, 4],
            pfa_vocab: [4, 18],
            example_len: [10, 50],
            examples_per_seq: [10, 20],
            perturb_rate: 0.2,
            perturb_fraction: 0.5,
            pool_size: 10,
            pool_seed: 1234,
        }
    }
}

impl DataConfig {
    pub fn pad(&self) -> u32 {
        self.total_vocab as u32
    }

    pub fn sep(&self) -> u32 {
        self.total_vocab as u32 + 1
    }

    /// Content tokens plus PAD and SEP.
    pub fn vocab_size(&self) -> usize {
        self.total_vocab + 2
    }

    pub fn pfa_ranges(&self) -> PfaRanges {
        PfaRanges {
            n_states: self.n_states,
            edges_per_state: self.edges_per_state,
            pfa_vocab: self.pfa_vocab,
            total_vocab: self.total_vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_vocab == 0 {
            return Err(Error::config("data.total_vocab", "must be positive"));
        }
        self.pfa_ranges().validate()?;
        check_range("data.example_len", self.example_len)?;
        check_range("data.examples_per_seq", self.examples_per_seq)?;
        if self.examples_per_seq[1] < 2 {
            return Err(Error::config("data.examples_per_seq", "copy task needs at least two examples"));
        }
        if !(0.0..=1.0).contains(&self.perturb_rate) {
            return Err(Error::config("data.perturb_rate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.perturb_fraction) {
            return Err(Error::config("data.perturb_fraction", "must lie in [0, 1]"));
        }
        if self.pool_size == 0 {
            return Err(Error::config("data.pool_size", "must be positive"));
        }
        Ok(())
    }

    /// Expected fraction of separator tokens, used for the output-bias warm start.
    pub fn separator_rate(&self) -> f64 {
        let mean_len = (self.example_len[0] + self.example_len[1]) as f64 / 2.0;
        1.0 / (mean_len + 1.0)
    }

    fn content_alphabet(&self) -> Vec<u32> {
        (0..self.total_vocab as u32).collect()
    }
}

/// A generated token sequence with its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub tokens: Vec<u32>,
    pub task: Task,
    /// Half-open `(start, end)` token ranges of each example.
    pub spans: Vec<(usize, usize)>,
    pub pfa_id: Option<String>,
    pub complexity_bits: Option<f64>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Joins examples with single separators.
    pub fn from_examples(examples: &[Vec<u32>], task: Task, sep: u32) -> Self {
        let mut tokens = Vec::new();
        let mut spans = Vec::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if i > 0 {
                tokens.push(sep);
            }
            let start = tokens.len();
            tokens.extend_from_slice(ex);
            spans.push((start, tokens.len()));
        }
        TaskSequence {
            tokens,
            task,
            spans,
            pfa_id: None,
            complexity_bits: None,
        }
    }

    /// Checks the layout invariants against a data config.
    pub fn validate(&self, cfg: &DataConfig) -> Result<()> {
        let sep = cfg.sep();
        let mut covered = vec![false; self.tokens.len()];
        for &(s, e) in &self.spans {
            if s >= e || e > self.tokens.len() {
                return Err(Error::Contract(format!("span ({s}, {e}) out of bounds")));
            }
            covered[s..e].iter_mut().for_each(|c| *c = true);
        }
        for (i, &t) in self.tokens.iter().enumerate() {
            if t as usize >= cfg.vocab_size() {
                return Err(Error::Contract(format!("token {t} at {i} outside vocabulary")));
            }
            if covered[i] == (t == sep) {
                return Err(Error::Contract(format!("separator layout broken at position {i}")));
            }
        }
        if self.complexity_bits.is_some() != self.task.has_complexity() {
            return Err(Error::Contract("complexity_bits present for the wrong task".into()));
        }
        Ok(())
    }
}

/// Memorized sequences and automata shared by training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPools {
    pub memorized_sequences: Vec<Vec<u32>>,
    pub memorized_pfas: Vec<Pfa>,
    pub seed: u64,
}

impl FixedPools {
    pub fn new(cfg: &DataConfig) -> Result<Self> {
        cfg.validate()?;
        let mut seq_rng = rng::stream(cfg.pool_seed, Purpose::Pools, 0);
        let mut pfa_rng = rng::stream(cfg.pool_seed, Purpose::Pools, 1);
        let memorized_sequences = (0..cfg.pool_size)
            .map(|_| random_example(&mut seq_rng, cfg))
            .collect();
        let memorized_pfas = (0..cfg.pool_size)
            .map(|_| sample_pfa(&mut pfa_rng, &cfg.pfa_ranges()))
            .collect::<Result<_>>()?;
        Ok(FixedPools {
            memorized_sequences,
            memorized_pfas,
            seed: cfg.pool_seed,
        })
    }
}

fn random_example(rng: &mut Rng, cfg: &DataConfig) -> Vec<u32> {
    let len = rng.random_range(cfg.example_len[0]..=cfg.example_len[1]);
    (0..len).map(|_| rng.random_range(0..cfg.total_vocab as u32)).collect()
}

/// A sequence together with the automaton that generated it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub sequence: TaskSequence,
    pub pfa: Option<Pfa>,
}

pub fn build_sequence(task: Task, pools: Option<&FixedPools>, rng: &mut Rng, cfg: &DataConfig, mode: Mode) -> Result<TaskSequence> {
    build_sequence_with_pfa(task, pools, rng, cfg, mode).map(|g| g.sequence)
}

pub fn build_sequence_with_pfa(
    task: Task,
    pools: Option<&FixedPools>,
    rng: &mut Rng,
    cfg: &DataConfig,
    mode: Mode,
) -> Result<Generated> {
    let need_pools = || pools.ok_or_else(|| Error::Domain(format!("task {task} requires fixed pools")));
    let [k_lo, k_hi] = cfg.examples_per_seq;
    let mut pfa = None;
    let mut alphabet = cfg.content_alphabet();

    let mut examples: Vec<Vec<u32>> = match task {
        Task::MemSeq => {
            let pools = need_pools()?;
            let k = rng.random_range(k_lo..=k_hi);
            (0..k)
                .map(|_| pools.memorized_sequences[rng.random_range(0..pools.memorized_sequences.len())].clone())
                .collect()
        }
        Task::MemProg | Task::Icll => {
            let a = if task == Task::MemProg {
                let pools = need_pools()?;
                pools.memorized_pfas[rng.random_range(0..pools.memorized_pfas.len())].clone()
            } else {
                sample_pfa(rng, &cfg.pfa_ranges())?
            };
            let k = rng.random_range(k_lo..=k_hi);
            let ex = (0..k).map(|_| sample_example(&a, rng, cfg.example_len)).collect();
            alphabet = a.token_subset.clone();
            pfa = Some(a);
            ex
        }
        Task::Random => {
            let k = rng.random_range(k_lo..=k_hi);
            (0..k).map(|_| random_example(rng, cfg)).collect()
        }
        Task::Copy => {
            let pairs = rng.random_range(k_lo.div_ceil(2).max(1)..=(k_hi / 2).max(1));
            let mut ex = Vec::with_capacity(2 * pairs);
            for _ in 0..pairs {
                let sub = random_example(rng, cfg);
                ex.push(sub.clone());
                ex.push(sub);
            }
            ex
        }
    };

    if mode == Mode::Train && task != Task::Copy && cfg.perturb_rate > 0.0 {
        let count = (cfg.perturb_fraction * examples.len() as f64).floor() as usize;
        for i in index::sample(rng, examples.len(), count) {
            examples[i] = perturb_tokens(&examples[i], cfg.perturb_rate, rng, &alphabet);
        }
    }

    let mut sequence = TaskSequence::from_examples(&examples, task, cfg.sep());
    if let Some(a) = &pfa {
        sequence.pfa_id = Some(a.id.clone());
        sequence.complexity_bits = Some(pfa_complexity(a, cfg.total_vocab)?);
    }
    Ok(Generated { sequence, pfa })
}

/// Draws a task uniformly from `tasks` and builds a sequence for it.
pub fn sample_task_mixture(
    rng: &mut Rng,
    pools: Option<&FixedPools>,
    cfg: &DataConfig,
    tasks: &[Task],
    mode: Mode,
) -> Result<TaskSequence> {
    if tasks.is_empty() {
        return Err(Error::config("train.enabled_tasks", "no tasks enabled"));
    }
    let task = tasks[rng.random_range(0..tasks.len())];
    build_sequence(task, pools, rng, cfg, mode)
}

/// Training batch for a given step; a pure function of `(seed, step)`.
pub fn train_batch(seed: u64, step: u64, batch_size: usize, pools: &FixedPools, cfg: &DataConfig, tasks: &[Task]) -> Result<Vec<TaskSequence>> {
    let mut rng = rng::stream(seed, Purpose::TrainData, step);
    (0..batch_size)
        .map(|_| sample_task_mixture(&mut rng, Some(pools), cfg, tasks, Mode::Train))
        .collect()
}

/// Held-out evaluation set: `per_task` unperturbed sequences for each task,
/// each task drawn from its own stream.
pub fn eval_set(seed: u64, per_task: usize, pools: &FixedPools, cfg: &DataConfig, tasks: &[Task]) -> Result<Vec<Generated>> {
    let mut out = Vec::with_capacity(per_task * tasks.len());
    for &task in tasks {
        let mut rng = rng::stream(seed, Purpose::EvalData, task as u64);
        for _ in 0..per_task {
            out.push(build_sequence_with_pfa(task, Some(pools), &mut rng, cfg, Mode::Eval)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DataConfig {
        DataConfig::default()
    }

    #[test]
    fn every_task_respects_layout() {
        let cfg = cfg();
        let pools = FixedPools::new(&cfg).unwrap();
        let mut r = rng::stream(3, Purpose::TrainData, 0);
        for mode in [Mode::Train, Mode::Eval] {
            for task in Task::ALL {
                for _ in 0..20 {
                    let s = build_sequence(task, Some(&pools), &mut r, &cfg, mode).unwrap();
                    s.validate(&cfg).unwrap();
                    assert!((10..=20).contains(&s.spans.len()), "{task}: {}", s.spans.len());
                    for &(a, b) in &s.spans {
                        assert!((10..=50).contains(&(b - a)));
                    }
                }
            }
        }
    }

    #[test]
    fn single_sequence_pool_tiles() {
        let cfg = cfg();
        let mut pools = FixedPools::new(&cfg).unwrap();
        pools.memorized_sequences.truncate(1);
        let s = build_sequence(Task::MemSeq, Some(&pools), &mut rng::stream(1, Purpose::EvalData, 0), &cfg, Mode::Eval).unwrap();
        for &(a, b) in &s.spans {
            assert_eq!(&s.tokens[a..b], pools.memorized_sequences[0].as_slice());
        }
    }

    #[test]
    fn icll_complexity_matches_attached_pfa() {
        let cfg = cfg();
        let g = build_sequence_with_pfa(Task::Icll, None, &mut rng::stream(9, Purpose::EvalData, 2), &cfg, Mode::Eval).unwrap();
        let pfa = g.pfa.unwrap();
        assert_eq!(g.sequence.complexity_bits.unwrap(), pfa_complexity(&pfa, 18).unwrap());
        assert_eq!(g.sequence.pfa_id.as_deref(), Some(pfa.id.as_str()));
    }

    #[test]
    fn copy_pairs_are_identical() {
        let cfg = cfg();
        let mut r = rng::stream(4, Purpose::TrainData, 1);
        for mode in [Mode::Train, Mode::Eval] {
            let s = build_sequence(Task::Copy, None, &mut r, &cfg, mode).unwrap();
            assert_eq!(s.spans.len() % 2, 0);
            for pair in s.spans.chunks(2) {
                assert_eq!(s.tokens[pair[0].0..pair[0].1], s.tokens[pair[1].0..pair[1].1]);
            }
        }
    }

    #[test]
    fn pools_are_required_for_memorized_tasks() {
        let cfg = cfg();
        let mut r = rng::stream(4, Purpose::TrainData, 1);
        assert!(matches!(build_sequence(Task::MemSeq, None, &mut r, &cfg, Mode::Eval), Err(Error::Domain(_))));
        assert!(matches!(build_sequence(Task::MemProg, None, &mut r, &cfg, Mode::Eval), Err(Error::Domain(_))));
    }

    #[test]
    fn mixture_rejects_empty_and_respects_single_task() {
        let cfg = cfg();
        let pools = FixedPools::new(&cfg).unwrap();
        let mut r = rng::stream(4, Purpose::TrainData, 1);
        assert!(matches!(sample_task_mixture(&mut r, Some(&pools), &cfg, &[], Mode::Train), Err(Error::Config { .. })));
        for _ in 0..10 {
            let s = sample_task_mixture(&mut r, Some(&pools), &cfg, &[Task::Random], Mode::Train).unwrap();
            assert_eq!(s.task, Task::Random);
        }
    }

    #[test]
    fn eval_mode_is_unperturbed() {
        let cfg = cfg();
        let mut pools = FixedPools::new(&cfg).unwrap();
        pools.memorized_sequences.truncate(1);
        let mut r = rng::stream(4, Purpose::TrainData, 1);
        let s = build_sequence(Task::MemSeq, Some(&pools), &mut r, &cfg, Mode::Train).unwrap();
        let changed = s
            .spans
            .iter()
            .filter(|&&(a, b)| s.tokens[a..b] != pools.memorized_sequences[0][..])
            .count();
        assert!(changed <= s.spans.len() / 2);
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
        assert!("mem".parse::<Task>().is_err());
    }
}
