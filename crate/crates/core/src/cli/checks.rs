//! Pass/fail checks of figure tables against the qualitative targets.

use std::fmt;

use crate::analysis::figures::{self, find_row, AnalysisConfig, Fig4Report, SummaryRow};
use crate::analysis::TokenRecord;
use crate::error::Result;
use crate::tasks::{Task, TaskSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {}  ({})", self.name, self.detail)
    }
}

fn gap_check(rows: &[SummaryRow], metric: &str, hi: Task, lo: Task) -> Option<CheckResult> {
    let label = format!("{}-{}", hi.as_str(), lo.as_str());
    let row = find_row(rows, "diff", &label)?;
    Some(CheckResult {
        name: format!("{metric}: {} > {}", hi.as_str(), lo.as_str()),
        pass: row.ci.lo > 0.0,
        detail: format!("diff {:.4} CI [{:.4}, {:.4}]", row.ci.mean, row.ci.lo, row.ci.hi),
    })
}

/// Memorized tasks below ICLL below random, each gap's CI above zero.
pub fn nll_ordering(rows: &[SummaryRow]) -> Vec<CheckResult> {
    [(Task::Icll, Task::MemSeq), (Task::Icll, Task::MemProg), (Task::Random, Task::Icll)]
        .into_iter()
        .filter_map(|(hi, lo)| gap_check(rows, "nll", hi, lo))
        .collect()
}

/// ICLL above every other task in PHi, each gap's CI above zero.
pub fn phi_ordering(rows: &[SummaryRow]) -> Vec<CheckResult> {
    [(Task::Icll, Task::MemSeq), (Task::Icll, Task::MemProg), (Task::Icll, Task::Random)]
        .into_iter()
        .filter_map(|(hi, lo)| gap_check(rows, "phi", hi, lo))
        .collect()
}

pub fn complexity(report: &Fig4Report, min_bins: usize) -> Vec<CheckResult> {
    let p = &report.partial;
    vec![
        CheckResult {
            name: "partial corr(phi, complexity | nll) > 0".into(),
            pass: p.lo > 0.0,
            detail: format!("r {:.3} CI [{:.3}, {:.3}] n {}", p.r, p.lo, p.hi, p.n),
        },
        CheckResult {
            name: format!("top complexity decile above bottom in >= {min_bins} NLL bins"),
            pass: report.top_above_bottom >= min_bins,
            detail: format!("{} of {}", report.top_above_bottom, report.bins_compared),
        },
    ]
}

/// Second occurrences at least `min_drop` nats cheaper than first ones, and
/// copy PHi above random PHi.
pub fn copying(rows: &[SummaryRow], min_drop: f64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    if let Some(r) = find_row(rows, "paired_diff", "copy_first-copy_second") {
        out.push(CheckResult {
            name: format!("nll: first - second occurrence >= {min_drop} nat"),
            pass: r.ci.mean >= min_drop,
            detail: format!("{:.4} CI [{:.4}, {:.4}]", r.ci.mean, r.ci.lo, r.ci.hi),
        });
    }
    if let Some(r) = find_row(rows, "diff", "copy-random") {
        out.push(CheckResult {
            name: "phi: copy > random".into(),
            pass: r.ci.mean > 0.0,
            detail: format!("diff {:.4} CI [{:.4}, {:.4}]", r.ci.mean, r.ci.lo, r.ci.hi),
        });
    }
    out
}

/// Every check the records support.
pub fn all_checks(records: &[TokenRecord], dataset: Option<&[TaskSequence]>, cfg: &AnalysisConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let present = figures::tasks_present(records);
    if present.len() >= 2 {
        out.extend(nll_ordering(&figures::fig2_rows(records, cfg)?));
        out.extend(phi_ordering(&figures::fig3_rows(records, cfg)?));
    }
    if present == [Task::Icll] && figures::fig4_supported(records, cfg) {
        out.extend(complexity(&figures::fig4(records, cfg)?, 7));
    }
    if let Some(ds) = dataset {
        if present.contains(&Task::Copy) && present.contains(&Task::Random) {
            out.extend(copying(&figures::copy_rows(records, ds, cfg)?, 1.0));
        }
    }
    Ok(out)
}
