//! Statistics over per-token records.

pub mod coder;
pub mod figures;
pub mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::Task;

pub use coder::{arithmetic_code_length, CodeLength};
pub use stats::{bootstrap_diff_ci, bootstrap_mean_ci, bootstrap_ratio_ci, partial_correlation, Correlation, Interval};

/// One evaluated token. `t` is the 1-based position of the predicted token,
/// so `t >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub run_id: String,
    pub seq_id: usize,
    pub t: usize,
    pub task: Task,
    pub complexity_bits: Option<f64>,
    pub nll_nats: f64,
    pub phi_nats: f64,
}

/// Key identifying a sequence across runs.
pub type SeqKey = (String, usize);

/// Records grouped by sequence, in `(run_id, seq_id)` order.
pub fn group_by_sequence(records: &[TokenRecord]) -> BTreeMap<SeqKey, Vec<&TokenRecord>> {
    let mut map: BTreeMap<SeqKey, Vec<&TokenRecord>> = BTreeMap::new();
    for r in records {
        map.entry((r.run_id.clone(), r.seq_id)).or_default().push(r);
    }
    map
}

/// Per-sequence value lists of one task, ready for the bootstrap.
pub fn units_for(records: &[TokenRecord], task: Task, value: impl Fn(&TokenRecord) -> f64) -> Vec<Vec<f64>> {
    group_by_sequence(records)
        .into_values()
        .filter(|rs| rs[0].task == task)
        .map(|rs| rs.into_iter().map(&value).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSummary {
    pub n_bins: usize,
    pub n_levels: usize,
    /// NLL range of each bin: `(min, max)` of its records.
    pub bin_ranges: Vec<(f64, f64)>,
    /// Complexity range of each level.
    pub level_ranges: Vec<(f64, f64)>,
    /// `n_bins x n_levels`, row-major.
    pub counts: Vec<usize>,
    pub mean_phi: Vec<Option<f64>>,
    /// Cell mean divided by the mean of the bin's non-empty cell means.
    pub normalized: Vec<Option<f64>>,
}

impl BinnedSummary {
    pub fn cell(&self, bin: usize, level: usize) -> (usize, Option<f64>) {
        let i = bin * self.n_levels + level;
        (self.counts[i], self.mean_phi[i])
    }
}

/// Equal-count assignment of `n` sorted items into `k` groups.
fn decile_of(rank: usize, n: usize, k: usize) -> usize {
    rank * k / n
}

/// Bins records into equal-count NLL bins and equal-count complexity levels
/// (over sequences) and averages PHi per cell. Ties are broken by
/// `(run_id, seq_id, t)`, so the result does not depend on record order.
pub fn bin_and_stratify(records: &[TokenRecord], n_bins: usize, n_levels: usize) -> Result<BinnedSummary> {
    if n_bins == 0 || n_levels == 0 {
        return Err(Error::Domain("bin and level counts must be positive".into()));
    }
    if records.len() < n_bins {
        return Err(Error::Domain(format!("{} records for {n_bins} bins", records.len())));
    }
    let mut seqs: BTreeMap<SeqKey, f64> = BTreeMap::new();
    for r in records {
        let c = r
            .complexity_bits
            .ok_or_else(|| Error::Domain(format!("record of task {} has no complexity", r.task)))?;
        seqs.insert((r.run_id.clone(), r.seq_id), c);
    }
    if seqs.len() < n_levels {
        return Err(Error::Domain(format!("{} sequences for {n_levels} levels", seqs.len())));
    }
    let mut by_c: Vec<(&SeqKey, f64)> = seqs.iter().map(|(k, &c)| (k, c)).collect();
    by_c.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let mut level_of: BTreeMap<&SeqKey, usize> = BTreeMap::new();
    let mut level_ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); n_levels];
    for (rank, (k, c)) in by_c.iter().enumerate() {
        let l = decile_of(rank, by_c.len(), n_levels);
        level_of.insert(k, l);
        level_ranges[l].0 = level_ranges[l].0.min(*c);
        level_ranges[l].1 = level_ranges[l].1.max(*c);
    }

    let mut order: Vec<&TokenRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        a.nll_nats
            .total_cmp(&b.nll_nats)
            .then_with(|| a.run_id.cmp(&b.run_id))
            .then_with(|| a.seq_id.cmp(&b.seq_id))
            .then_with(|| a.t.cmp(&b.t))
    });
    let n = order.len();
    let mut counts = vec![0usize; n_bins * n_levels];
    let mut sums = vec![0f64; n_bins * n_levels];
    let mut bin_ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); n_bins];
    for (rank, r) in order.iter().enumerate() {
        let b = decile_of(rank, n, n_bins);
        let l = level_of[&(r.run_id.clone(), r.seq_id)];
        counts[b * n_levels + l] += 1;
        sums[b * n_levels + l] += r.phi_nats;
        bin_ranges[b].0 = bin_ranges[b].0.min(r.nll_nats);
        bin_ranges[b].1 = bin_ranges[b].1.max(r.nll_nats);
    }
    let mean_phi: Vec<Option<f64>> = counts
        .iter()
        .zip(&sums)
        .map(|(&c, &s)| (c > 0).then(|| s / c as f64))
        .collect();
    let mut normalized = vec![None; n_bins * n_levels];
    for b in 0..n_bins {
        let row = &mean_phi[b * n_levels..(b + 1) * n_levels];
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        if present.is_empty() {
            continue;
        }
        let m = present.iter().sum::<f64>() / present.len() as f64;
        for l in 0..n_levels {
            normalized[b * n_levels + l] = row[l].map(|v| if m != 0.0 { v / m } else { 1.0 });
        }
    }
    Ok(BinnedSummary {
        n_bins,
        n_levels,
        bin_ranges,
        level_ranges,
        counts,
        mean_phi,
        normalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amount {
    pub nats: f64,
    pub bits: f64,
}

impl Amount {
    pub fn from_nats(nats: f64) -> Self {
        Amount {
            nats,
            bits: nats / std::f64::consts::LN_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptionLength {
    /// Code length of the tokens.
    pub tokens: Amount,
    /// Code length of the latent sequence.
    pub latents: Amount,
    /// For a chosen position `t`: `NLL(t) + sum_{s < t} PHi(s)`.
    pub at: Option<(usize, Amount)>,
}

/// Sums the per-token losses of one sequence. Records must cover a
/// contiguous range of positions.
pub fn description_length_report(records: &[TokenRecord], t_hat: Option<usize>) -> Result<DescriptionLength> {
    let mut rs: Vec<&TokenRecord> = records.iter().collect();
    rs.sort_by_key(|r| r.t);
    for w in rs.windows(2) {
        if w[0].run_id != w[1].run_id || w[0].seq_id != w[1].seq_id {
            return Err(Error::Contract("records span more than one sequence".into()));
        }
        if w[1].t != w[0].t + 1 {
            return Err(Error::Contract(format!("gap in positions between t={} and t={}", w[0].t, w[1].t)));
        }
    }
    let tokens = Amount::from_nats(rs.iter().map(|r| r.nll_nats).sum());
    let latents = Amount::from_nats(rs.iter().map(|r| r.phi_nats).sum());
    let at = match t_hat {
        None => None,
        Some(t) => {
            let target = rs
                .iter()
                .find(|r| r.t == t)
                .ok_or_else(|| Error::Contract(format!("no record at position {t}")))?;
            let prefix: f64 = rs.iter().filter(|r| r.t < t).map(|r| r.phi_nats).sum();
            Some((t, Amount::from_nats(target.nll_nats + prefix)))
        }
    };
    Ok(DescriptionLength { tokens, latents, at })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub bins: (usize, usize),
    /// `bins.0 x bins.1`, row-major over x.
    pub counts: Vec<u64>,
}

impl Histogram2d {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn bin_index(v: f64, (lo, hi): (f64, f64), n: usize) -> usize {
    let f = (v - lo) / (hi - lo);
    if !(f > 0.0) {
        0
    } else {
        ((f * n as f64) as usize).min(n - 1)
    }
}

/// Counts `(nll, phi)` pairs on a grid; values outside the ranges land in
/// the edge cells.
pub fn histogram2d(points: &[(f64, f64)], x_range: (f64, f64), y_range: (f64, f64), bins: (usize, usize)) -> Result<Histogram2d> {
    let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && hi > lo;
    if !ok(x_range) || !ok(y_range) || bins.0 == 0 || bins.1 == 0 {
        return Err(Error::Domain("histogram ranges must be finite and non-empty".into()));
    }
    let mut counts = vec![0u64; bins.0 * bins.1];
    for &(x, y) in points {
        let i = bin_index(x, x_range, bins.0);
        let j = bin_index(y, y_range, bins.1);
        counts[i * bins.1 + j] += 1;
    }
    Ok(Histogram2d {
        x_range,
        y_range,
        bins,
        counts,
    })
}
