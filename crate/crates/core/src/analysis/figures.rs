//! Figure tables computed from token records, and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    bin_and_stratify, bootstrap_diff_ci, bootstrap_mean_ci, bootstrap_ratio_ci, group_by_sequence, histogram2d,
    partial_correlation, units_for, BinnedSummary, Correlation, Histogram2d, Interval, TokenRecord,
};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::tasks::{Task, TaskSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub n_resamples: usize,
    pub level: f64,
    pub n_bins: usize,
    pub n_levels: usize,
    pub hist_bins: [usize; 2],
    pub hist_nll_range: [f64; 2],
    /// Defaults to `[0, max PHi]` of the task's records.
    pub hist_phi_range: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            n_resamples: 2000,
            level: 0.95,
            n_bins: 10,
            n_levels: 10,
            hist_bins: [40, 40],
            hist_nll_range: [0.0, 6.0],
            hist_phi_range: None,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_resamples < super::stats::MIN_RESAMPLES {
            return Err(Error::config("analysis.n_resamples", "must be at least 1000"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config("analysis.level", "must lie in (0, 1)"));
        }
        if self.n_bins == 0 || self.n_levels == 0 {
            return Err(Error::config("analysis.n_bins", "bin and level counts must be positive"));
        }
        if self.hist_bins.contains(&0) || !(self.hist_nll_range[1] > self.hist_nll_range[0]) {
            return Err(Error::config("analysis.hist_bins", "histogram needs positive bins and a non-empty range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nll,
    Phi,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Nll => "nll",
            Metric::Phi => "phi",
        }
    }

    pub fn of(self, r: &TokenRecord) -> f64 {
        match self {
            Metric::Nll => r.nll_nats,
            Metric::Phi => r.phi_nats,
        }
    }
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// What is summarized, e.g. `mean`, `diff`, `ratio_vs_mem_seq`.
    pub kind: String,
    pub metric: String,
    pub label: String,
    pub ci: Interval,
    pub n_units: usize,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "kind,metric,label,mean,ci_lo,ci_hi,n_units";
}

pub fn rows_to_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SummaryRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.kind, r.metric, r.label, r.ci.mean, r.ci.lo, r.ci.hi, r.n_units);
    }
    s
}

/// Tasks present in the records with at least two sequences, in canonical order.
pub fn tasks_present(records: &[TokenRecord]) -> Vec<Task> {
    let seqs = group_by_sequence(records);
    Task::ALL
        .into_iter()
        .filter(|&t| seqs.values().filter(|rs| rs[0].task == t).count() >= 2)
        .collect()
}

/// Bootstrapped per-task mean of `metric` over sequences.
pub fn task_means(records: &[TokenRecord], metric: Metric, cfg: &AnalysisConfig) -> Result<Vec<SummaryRow>> {
    tasks_present(records)
        .into_iter()
        .map(|task| {
            let units = units_for(records, task, |r| metric.of(r));
            Ok(SummaryRow {
                kind: "mean".into(),
                metric: metric.as_str().into(),
                label: task.as_str().into(),
                ci: bootstrap_mean_ci(&units, cfg.n_resamples, cfg.level, cfg.seed)?,
                n_units: units.len(),
            })
        })
        .collect()
}

/// `mean(hi) - mean(lo)` for each pair whose tasks are both present.
pub fn task_gaps(records: &[TokenRecord], metric: Metric, pairs: &[(Task, Task)], cfg: &AnalysisConfig) -> Result<Vec<SummaryRow>> {
    let present = tasks_present(records);
    pairs
        .iter()
        .filter(|(a, b)| present.contains(a) && present.contains(b))
        .map(|&(hi, lo)| {
            let a = units_for(records, hi, |r| metric.of(r));
            let b = units_for(records, lo, |r| metric.of(r));
            Ok(SummaryRow {
                kind: "diff".into(),
                metric: metric.as_str().into(),
                label: format!("{}-{}", hi.as_str(), lo.as_str()),
                ci: bootstrap_diff_ci(&a, &b, cfg.n_resamples, cfg.level, cfg.seed)?,
                n_units: a.len() + b.len(),
            })
        })
        .collect()
}

/// Gaps checked for the NLL ordering: memorized tasks below ICLL below random.
pub const NLL_GAPS: [(Task, Task); 4] = [
    (Task::Icll, Task::MemSeq),
    (Task::Icll, Task::MemProg),
    (Task::Random, Task::Icll),
    (Task::MemProg, Task::MemSeq),
];

/// Gaps checked for PHi: ICLL above every other task.
pub const PHI_GAPS: [(Task, Task); 4] = [
    (Task::Icll, Task::MemSeq),
    (Task::Icll, Task::MemProg),
    (Task::Icll, Task::Random),
    (Task::Copy, Task::Random),
];

pub fn fig2_rows(records: &[TokenRecord], cfg: &AnalysisConfig) -> Result<Vec<SummaryRow>> {
    let mut rows = task_means(records, Metric::Nll, cfg)?;
    rows.extend(task_gaps(records, Metric::Nll, &NLL_GAPS, cfg)?);
    Ok(rows)
}

/// PHi per task, the gaps, and each task relative to memorized sequences
/// both as a difference and as a ratio.
pub fn fig3_rows(records: &[TokenRecord], cfg: &AnalysisConfig) -> Result<Vec<SummaryRow>> {
    let mut rows = task_means(records, Metric::Phi, cfg)?;
    rows.extend(task_gaps(records, Metric::Phi, &PHI_GAPS, cfg)?);
    let present = tasks_present(records);
    if present.contains(&Task::MemSeq) {
        let base = units_for(records, Task::MemSeq, |r| r.phi_nats);
        for &task in &present {
            let u = units_for(records, task, |r| r.phi_nats);
            rows.push(SummaryRow {
                kind: "diff_vs_mem_seq".into(),
                metric: "phi".into(),
                label: task.as_str().into(),
                ci: bootstrap_diff_ci(&u, &base, cfg.n_resamples, cfg.level, cfg.seed)?,
                n_units: u.len(),
            });
            rows.push(SummaryRow {
                kind: "ratio_vs_mem_seq".into(),
                metric: "phi".into(),
                label: task.as_str().into(),
                ci: bootstrap_ratio_ci(&u, &base, cfg.n_resamples, cfg.level, cfg.seed)?,
                n_units: u.len(),
            });
        }
    }
    Ok(rows)
}

pub fn find_row<'a>(rows: &'a [SummaryRow], kind: &str, label: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.kind == kind && r.label == label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Report {
    pub binned: BinnedSummary,
    /// Sequence-mean PHi against complexity, controlling for sequence-mean NLL.
    pub partial: Correlation,
    /// Bins where the top complexity level has higher mean PHi than the bottom.
    pub top_above_bottom: usize,
    pub bins_compared: usize,
}

/// Enough sequences with a complexity label to fill every level.
pub fn fig4_supported(records: &[TokenRecord], cfg: &AnalysisConfig) -> bool {
    let recs: Vec<TokenRecord> = records.iter().filter(|r| r.complexity_bits.is_some()).cloned().collect();
    recs.len() >= cfg.n_bins && group_by_sequence(&recs).len() >= cfg.n_levels.max(10)
}

/// Complexity stratification over the records that carry a complexity.
pub fn fig4(records: &[TokenRecord], cfg: &AnalysisConfig) -> Result<Fig4Report> {
    let recs: Vec<TokenRecord> = records.iter().filter(|r| r.complexity_bits.is_some()).cloned().collect();
    let binned = bin_and_stratify(&recs, cfg.n_bins, cfg.n_levels)?;
    let (mut phi, mut c, mut nll) = (Vec::new(), Vec::new(), Vec::new());
    for rs in group_by_sequence(&recs).into_values() {
        let n = rs.len() as f64;
        phi.push(rs.iter().map(|r| r.phi_nats).sum::<f64>() / n);
        nll.push(rs.iter().map(|r| r.nll_nats).sum::<f64>() / n);
        c.push(rs[0].complexity_bits.unwrap());
    }
    let partial = partial_correlation(&phi, &c, &nll)?;
    let top = cfg.n_levels - 1;
    let mut top_above_bottom = 0;
    let mut bins_compared = 0;
    for b in 0..cfg.n_bins {
        if let (Some(hi), Some(lo)) = (binned.cell(b, top).1, binned.cell(b, 0).1) {
            bins_compared += 1;
            if hi > lo {
                top_above_bottom += 1;
            }
        }
    }
    Ok(Fig4Report {
        binned,
        partial,
        top_above_bottom,
        bins_compared,
    })
}

pub fn binned_to_csv(s: &BinnedSummary) -> String {
    let mut out = String::from("bin,level,nll_lo,nll_hi,complexity_lo,complexity_hi,count,mean_phi,normalized_phi\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in 0..s.n_bins {
        for l in 0..s.n_levels {
            let i = b * s.n_levels + l;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                b + 1,
                l + 1,
                s.bin_ranges[b].0,
                s.bin_ranges[b].1,
                s.level_ranges[l].0,
                s.level_ranges[l].1,
                s.counts[i],
                opt(s.mean_phi[i]),
                opt(s.normalized[i])
            );
        }
    }
    out
}

pub fn partial_to_csv(r: &Fig4Report) -> String {
    format!(
        "r,ci_lo,ci_hi,n_sequences,top_above_bottom_bins,bins_compared\n{},{},{},{},{},{}\n",
        r.partial.r, r.partial.lo, r.partial.hi, r.partial.n, r.top_above_bottom, r.bins_compared
    )
}

pub fn task_histogram(records: &[TokenRecord], task: Task, cfg: &AnalysisConfig) -> Result<Histogram2d> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.task == task)
        .map(|r| (r.nll_nats, r.phi_nats))
        .collect();
    let phi_range = match cfg.hist_phi_range {
        Some([lo, hi]) => (lo, hi),
        None => {
            let m = pts.iter().map(|p| p.1).fold(0.0, f64::max);
            (0.0, if m > 0.0 { m } else { 1.0 })
        }
    };
    histogram2d(
        &pts,
        (cfg.hist_nll_range[0], cfg.hist_nll_range[1]),
        phi_range,
        (cfg.hist_bins[0], cfg.hist_bins[1]),
    )
}

pub fn histogram_to_csv(h: &Histogram2d) -> String {
    let mut out = String::from("nll_bin,phi_bin,nll_lo,nll_hi,phi_lo,phi_hi,count\n");
    let (nx, ny) = h.bins;
    let wx = (h.x_range.1 - h.x_range.0) / nx as f64;
    let wy = (h.y_range.1 - h.y_range.0) / ny as f64;
    for i in 0..nx {
        for j in 0..ny {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                i,
                j,
                h.x_range.0 + i as f64 * wx,
                h.x_range.0 + (i + 1) as f64 * wx,
                h.y_range.0 + j as f64 * wy,
                h.y_range.0 + (j + 1) as f64 * wy,
                h.counts[i * ny + j]
            );
        }
    }
    out
}

/// Copy-task statistics: NLL on first versus second occurrences of each
/// copied example, and PHi of the copy task against the random task.
pub fn copy_rows(records: &[TokenRecord], dataset: &[TaskSequence], cfg: &AnalysisConfig) -> Result<Vec<SummaryRow>> {
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for ((_, seq_id), rs) in group_by_sequence(records) {
        if rs[0].task != Task::Copy {
            continue;
        }
        let seq = dataset
            .get(seq_id)
            .filter(|s| s.task == Task::Copy)
            .ok_or_else(|| Error::Contract(format!("record sequence {seq_id} is not a copy sequence in the dataset")))?;
        let (mut f, mut s) = (Vec::new(), Vec::new());
        for r in rs {
            let idx = r.t - 1;
            if let Some(k) = seq.spans.iter().position(|&(a, b)| a <= idx && idx < b) {
                if k % 2 == 0 {
                    f.push(r.nll_nats);
                } else {
                    s.push(r.nll_nats);
                }
            }
        }
        if !f.is_empty() && !s.is_empty() {
            first.push(f);
            second.push(s);
        }
    }
    let mut rows = vec![
        SummaryRow {
            kind: "mean".into(),
            metric: "nll".into(),
            label: "copy_first".into(),
            ci: bootstrap_mean_ci(&first, cfg.n_resamples, cfg.level, cfg.seed)?,
            n_units: first.len(),
        },
        SummaryRow {
            kind: "mean".into(),
            metric: "nll".into(),
            label: "copy_second".into(),
            ci: bootstrap_mean_ci(&second, cfg.n_resamples, cfg.level, cfg.seed)?,
            n_units: second.len(),
        },
    ];
    // paired per sequence: first minus second
    let paired: Vec<Vec<f64>> = first
        .iter()
        .zip(&second)
        .map(|(f, s)| vec![f.iter().sum::<f64>() / f.len() as f64 - s.iter().sum::<f64>() / s.len() as f64])
        .collect();
    rows.push(SummaryRow {
        kind: "paired_diff".into(),
        metric: "nll".into(),
        label: "copy_first-copy_second".into(),
        ci: bootstrap_mean_ci(&paired, cfg.n_resamples, cfg.level, cfg.seed)?,
        n_units: paired.len(),
    });
    rows.extend(task_gaps(records, Metric::Phi, &[(Task::Copy, Task::Random)], cfg)?);
    Ok(rows)
}

/// Writes every figure table that the records support into `dir`.
pub fn write_all(dir: &Path, records: &[TokenRecord], dataset: Option<&[TaskSequence]>, cfg: &AnalysisConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        write_atomic(&dir.join(&name), body.as_bytes())?;
        written.push(name);
        Ok(())
    };
    if tasks_present(records).len() >= 2 {
        put("fig2_nll.csv".into(), rows_to_csv(&fig2_rows(records, cfg)?))?;
        put("fig3_phi.csv".into(), rows_to_csv(&fig3_rows(records, cfg)?))?;
    }
    if fig4_supported(records, cfg) {
        let r = fig4(records, cfg)?;
        put("fig4_binned.csv".into(), binned_to_csv(&r.binned))?;
        put("fig4_partial_corr.csv".into(), partial_to_csv(&r))?;
    }
    if let Some(ds) = dataset {
        let present = tasks_present(records);
        if present.contains(&Task::Copy) && present.contains(&Task::Random) {
            put("copy_occurrences.csv".into(), rows_to_csv(&copy_rows(records, ds, cfg)?))?;
        }
    }
    for task in tasks_present(records) {
        let h = task_histogram(records, task, cfg)?;
        put(format!("hist2d_{}.csv", task.as_str()), histogram_to_csv(&h))?;
    }
    Ok(written)
}
