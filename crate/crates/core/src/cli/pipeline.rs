//! The four pipeline stages and the files they exchange.
//!
//! A run directory holds:
//!
//! | file | written by | content |
//! |------|------------|---------|
//! | `config.json` | every stage | effective [`ExperimentConfig`] |
//! | `pools.json` | `gen-data` | [`FixedPools`] |
//! | `dataset.jsonl` | `gen-data` | one [`TaskSequence`] per line; line `i` is `seq_id = i` |
//! | `pfas.jsonl` | `gen-data` | `{seq_id, pfa}` for sequences generated by an automaton |
//! | `checkpoint.bin` | `train` | parameters and optimizer state |
//! | `train_log.csv` | `train` | one row per step |
//! | `records.jsonl` | `eval` | one [`TokenRecord`] per line |
//! | `fig*.csv`, `hist2d_*.csv`, `copy_occurrences.csv` | `analyze` | figure tables |
//! | `manifest.json` | every stage | [`RunManifest`] |
//!
//! Stages only communicate through these files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checks::{all_checks, CheckResult};
use super::config::ExperimentConfig;
use super::manifest::RunManifest;
use crate::analysis::figures::write_all;
use crate::analysis::TokenRecord;
use crate::error::{Error, Result};
use crate::fsio::{read_jsonl, sha256_hex, write_atomic, write_jsonl};
use crate::model::SeqModel;
use crate::tasks::{eval_set, FixedPools, Pfa, TaskSequence};
use crate::train::checkpoint::load_checkpoint;
use crate::train::{evaluate, load_for_eval, run_training, RunOutputs, StepLog, TrainState, CHECKPOINT_FILE, TRAIN_LOG_FILE};

pub const CONFIG_FILE: &str = "config.json";
pub const POOLS_FILE: &str = "pools.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const PFAS_FILE: &str = "pfas.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfaRow {
    pub seq_id: usize,
    pub pfa: Pfa,
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.file(CHECKPOINT_FILE)
    }

    pub fn dataset(&self) -> PathBuf {
        self.file(DATASET_FILE)
    }

    pub fn records(&self) -> PathBuf {
        self.file(RECORDS_FILE)
    }
}

/// Hash of the run's identity (the config minus `out_dir`).
pub fn config_sha256(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.identity().to_string().as_bytes())
}

/// First 12 hex digits of [`config_sha256`]; tags token records.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    config_sha256(cfg)[..12].to_string()
}

/// Writes the effective config and refreshes the manifest.
pub fn archive(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir = &cfg.out_dir;
    let mut json = cfg.to_json();
    json.push('\n');
    write_atomic(&dir.join(CONFIG_FILE), json.as_bytes())?;
    let m = RunManifest::collect(dir, &config_sha256(cfg))?;
    m.write(dir)?;
    Ok(m)
}

/// Pools from `pools.json` if present, otherwise regenerated from the config.
pub fn load_pools(cfg: &ExperimentConfig) -> Result<FixedPools> {
    let path = cfg.out_dir.join(POOLS_FILE);
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        Ok(serde_json::from_str(&text)?)
    } else {
        FixedPools::new(&cfg.data)
    }
}

/// Pools plus the held-out evaluation set for the enabled tasks.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<Vec<TaskSequence>> {
    let pools = FixedPools::new(&cfg.data)?;
    let generated = eval_set(cfg.train.seed, cfg.eval.per_task, &pools, &cfg.data, &cfg.train.enabled_tasks)?;
    let dir = RunDir::new(&cfg.out_dir);
    let mut pools_json = serde_json::to_string(&pools)?;
    pools_json.push('\n');
    write_atomic(&dir.file(POOLS_FILE), pools_json.as_bytes())?;
    let pfas: Vec<PfaRow> = generated
        .iter()
        .enumerate()
        .filter_map(|(seq_id, g)| g.pfa.clone().map(|pfa| PfaRow { seq_id, pfa }))
        .collect();
    let dataset: Vec<TaskSequence> = generated.into_iter().map(|g| g.sequence).collect();
    write_jsonl(&dir.file(PFAS_FILE), &pfas)?;
    write_jsonl(&dir.dataset(), &dataset)?;
    archive(cfg)?;
    Ok(dataset)
}

/// Trains to `cfg.train.steps`. With `resume`, continues from the run's
/// checkpoint when one exists.
pub fn train(cfg: &ExperimentConfig, resume: bool) -> Result<Vec<StepLog>> {
    let model = SeqModel::new(cfg.model.clone())?;
    let pools = load_pools(cfg)?;
    let dir = RunDir::new(&cfg.out_dir);
    let state = if resume && dir.checkpoint().exists() {
        let ck = load_checkpoint(&dir.checkpoint())?;
        ck.check_model(&model)?;
        ck.into_state()
    } else {
        TrainState::init(&model, &cfg.train)
    };
    let start = state.step;
    let outputs = RunOutputs {
        dir: Some(cfg.out_dir.clone()),
        config_json: Some(cfg.identity()),
    };
    let earlier = if start > 0 { earlier_log_rows(&dir.file(TRAIN_LOG_FILE), start)? } else { Vec::new() };
    let (_, logs) = run_training(&model, state, &cfg.train, &cfg.data, &pools, &outputs, None)?;
    if !earlier.is_empty() {
        let mut csv = String::from(StepLog::CSV_HEADER);
        csv.push('\n');
        for row in earlier {
            csv.push_str(&row);
            csv.push('\n');
        }
        for l in &logs {
            csv.push_str(&l.csv_row());
            csv.push('\n');
        }
        write_atomic(&dir.file(TRAIN_LOG_FILE), csv.as_bytes())?;
    }
    archive(cfg)?;
    Ok(logs)
}

/// Log rows with `step <= upto` from an existing log, if any.
fn earlier_log_rows(path: &Path, upto: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= upto))
        .map(str::to_string)
        .collect())
}

/// Evaluates the dataset with the given (or the run's) checkpoint.
pub fn eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<TokenRecord>> {
    let dir = RunDir::new(&cfg.out_dir);
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| dir.checkpoint());
    if !ckpt.exists() {
        return Err(Error::MissingInput(ckpt));
    }
    let dataset: Vec<TaskSequence> = read_jsonl(&dir.dataset())?;
    let model = SeqModel::new(cfg.model.clone())?;
    let params = load_for_eval(&ckpt, &model)?;
    let records = evaluate(&model, &params, &dataset, &cfg.eval, cfg.train.seed, &run_id(cfg))?;
    write_jsonl(&dir.records(), &records)?;
    archive(cfg)?;
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutput {
    pub written: Vec<String>,
    pub checks: Vec<CheckResult>,
}

/// Figure tables from `records.jsonl` (and `dataset.jsonl` for the copy
/// statistics, when present).
pub fn analyze(cfg: &ExperimentConfig) -> Result<AnalyzeOutput> {
    let dir = RunDir::new(&cfg.out_dir);
    let records: Vec<TokenRecord> = read_jsonl(&dir.records())?;
    let dataset: Option<Vec<TaskSequence>> = if dir.dataset().exists() { Some(read_jsonl(&dir.dataset())?) } else { None };
    let written = write_all(&cfg.out_dir, &records, dataset.as_deref(), &cfg.analysis)?;
    let checks = all_checks(&records, dataset.as_deref(), &cfg.analysis)?;
    archive(cfg)?;
    Ok(AnalyzeOutput { written, checks })
}

/// All four stages in order.
pub fn run_all(cfg: &ExperimentConfig, resume: bool) -> Result<AnalyzeOutput> {
    gen_data(cfg)?;
    train(cfg, resume)?;
    eval(cfg, None)?;
    analyze(cfg)
}
