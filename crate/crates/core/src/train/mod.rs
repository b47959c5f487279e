//! Optimisation loop and evaluation.

pub mod checkpoint;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::TokenRecord;
use crate::error::{Error, Result};
use crate::model::{LossWeights, Regularizer, SeqModel};
use crate::params::global_norm;
use crate::phi::PhiMode;
use crate::rng::{stream, Purpose};
use crate::tasks::{train_batch, DataConfig, FixedPools, Task, TaskSequence};
use crate::tensor::Float;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub seed: u64,
    pub preset: Preset,
    pub enabled_tasks: Vec<Task>,
    /// Log a scalar row every this many steps (0 disables).
    pub eval_every: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
    pub nll_weight: f64,
    pub phi_weight: f64,
    /// Per-dimension KL floor in nats.
    pub free_bits: f64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            steps: 30_000,
            batch_size: 16,
            lr: 3e-4,
            warmup_steps: 500,
            clip_norm: 1.0,
            seed: 0,
            preset: Preset::Paper,
            enabled_tasks: Task::FOUR.to_vec(),
            eval_every: 100,
            checkpoint_every: 1000,
            adam: AdamConfig::default(),
            nll_weight: 1.0,
            phi_weight: 1.0,
            free_bits: 0.0,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            nll: self.nll_weight,
            phi: self.phi_weight,
            free_bits: self.free_bits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = |k: &str, m: &str| Err(Error::config(format!("train.{k}"), m));
        if self.batch_size == 0 {
            return e("batch_size", "must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return e("lr", "must be a finite non-negative number");
        }
        if !(self.clip_norm > 0.0) {
            return e("clip_norm", "must be positive");
        }
        if self.enabled_tasks.is_empty() {
            return e("enabled_tasks", "at least one task must be enabled");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return e("adam", "betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.free_bits >= 0.0) {
            return e("free_bits", "must be non-negative");
        }
        Ok(())
    }
}

/// Linear warm-up from zero to `lr` over `warmup_steps`, then constant.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 || step >= cfg.warmup_steps {
        cfg.lr
    } else {
        cfg.lr * step as f64 / cfg.warmup_steps as f64
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Float>(grads: &mut [T], max_norm: f64) -> Result<f64> {
    let g = global_norm(grads);
    if !g.is_finite() {
        let bad = grads.iter().position(|v| !v.is_finite());
        return Err(Error::NonFinite(format!(
            "gradient norm is {g} (first bad entry at index {bad:?})"
        )));
    }
    if g > max_norm {
        let s = T::from_f64(max_norm / g);
        grads.iter_mut().for_each(|v| *v *= s);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Number of updates applied so far.
    pub step: u64,
    pub hyper: AdamConfig,
}

impl<T: Float> OptimizerState<T> {
    pub fn new(len: usize, hyper: AdamConfig) -> Self {
        OptimizerState {
            m: vec![T::ZERO; len],
            v: vec![T::ZERO; len],
            step: 0,
            hyper,
        }
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let step_size = T::from_f64(lr / c1);
        let inv_sqrt_c2 = T::from_f64(1.0 / c2.sqrt());
        let eps = T::from_f64(eps);
        for i in 0..params.len() {
            let g = grads[i];
            let m = b1 * self.m[i] + ob1 * g;
            let v = b2 * self.v[i] + ob2 * g * g;
            self.m[i] = m;
            self.v[i] = v;
            params[i] -= step_size * m / (v.sqrt() * inv_sqrt_c2 + eps);
        }
    }
}

/// Everything that changes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Vec<f32>,
    pub opt: OptimizerState<f32>,
    /// Steps completed.
    pub step: u64,
}

impl TrainState {
    pub fn init(model: &SeqModel, cfg: &TrainConfig) -> Self {
        let params = model.init_params(&mut stream(cfg.seed, Purpose::Init, 0));
        TrainState {
            opt: OptimizerState::new(params.len(), cfg.adam),
            params,
            step: 0,
        }
    }
}

/// Scalar log row of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub nll: f64,
    pub phi_nats: f64,
    pub phi_dim_mean: f64,
    pub phi_training_term: f64,
    pub objective: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub wallclock_s: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,nll,phi_nats,phi_dim_mean,phi_training_term,objective,lr,grad_norm,wallclock_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.step,
            self.nll,
            self.phi_nats,
            self.phi_dim_mean,
            self.phi_training_term,
            self.objective,
            self.lr,
            self.grad_norm,
            self.wallclock_s
        )
    }
}

/// Standard-normal latent noise for one training step.
pub fn step_noise(seed: u64, step: u64, len: usize) -> Vec<f32> {
    let mut rng = stream(seed, Purpose::Noise, step);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// One optimizer update on `batch`. The step index selects the noise stream.
pub fn train_step(
    model: &SeqModel,
    state: &mut TrainState,
    batch: &[TaskSequence],
    cfg: &TrainConfig,
    regularizer: Option<Regularizer<'_>>,
) -> Result<StepLog> {
    let seqs: Vec<&[u32]> = batch.iter().map(|s| s.tokens.as_slice()).collect();
    let rows: usize = seqs.iter().map(|s| s.len()).sum();
    let noise = step_noise(cfg.seed, state.step, rows * model.config.model_dim);
    let mut grads = vec![0f32; state.params.len()];
    let out = model.loss_and_grad(
        &state.params,
        &mut grads,
        &seqs,
        PhiMode::Train,
        Some(&noise),
        &cfg.loss_weights(),
        regularizer,
    )?;
    let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm)?;
    let lr = lr_at(state.step, cfg);
    state.opt.update(&mut state.params, &grads, lr);
    state.step += 1;
    Ok(StepLog {
        step: state.step,
        nll: out.nll_mean(),
        phi_nats: out.phi_mean(),
        phi_dim_mean: out.phi_dim_mean(),
        phi_training_term: out.phi_term.iter().sum::<f64>() / out.phi_tokens().max(1) as f64,
        objective: out.objective,
        lr,
        grad_norm,
        wallclock_s: 0.0,
    })
}

/// Where and how often [`run_training`] persists its state.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub dir: Option<PathBuf>,
    /// Archived beside the checkpoint so it can be reloaded on its own.
    pub config_json: Option<serde_json::Value>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Trains from `state` up to `cfg.steps`, writing checkpoints and the scalar
/// log when an output directory is given.
pub fn run_training(
    model: &SeqModel,
    mut state: TrainState,
    cfg: &TrainConfig,
    data: &DataConfig,
    pools: &FixedPools,
    outputs: &RunOutputs,
    regularizer: Option<Regularizer<'_>>,
) -> Result<(TrainState, Vec<StepLog>)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut logs = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    let ckpt_path = outputs.dir.as_ref().map(|d| d.join(CHECKPOINT_FILE));
    let save = |state: &TrainState| -> Result<()> {
        if let Some(path) = &ckpt_path {
            let ck = Checkpoint::from_state(model, state, cfg.seed, outputs.config_json.clone());
            save_checkpoint(path, &ck)?;
        }
        Ok(())
    };
    while state.step < cfg.steps {
        let batch = train_batch(cfg.seed, state.step, cfg.batch_size, pools, data, &cfg.enabled_tasks)?;
        let mut log = match train_step(model, &mut state, &batch, cfg, regularizer) {
            Ok(log) => log,
            Err(e @ Error::NonFinite(_)) => {
                let hint = match &last_good {
                    Some(p) => format!("last good checkpoint: {}", p.display()),
                    None => "no checkpoint written yet".to_string(),
                };
                return Err(Error::NonFinite(format!("{e} at step {}; {hint}", state.step + 1)));
            }
            Err(e) => return Err(e),
        };
        log.wallclock_s = start.elapsed().as_secs_f64();
        let s = state.step;
        if cfg.eval_every > 0 && (s % cfg.eval_every == 0 || s == 1) {
            log::info!(
                "step {s} nll {:.4} phi {:.3} obj {:.4} lr {:.2e} |g| {:.3}",
                log.nll,
                log.phi_nats,
                log.objective,
                log.lr,
                log.grad_norm
            );
        }
        logs.push(log);
        if cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0 && s < cfg.steps {
            save(&state)?;
            last_good.clone_from(&ckpt_path);
        }
    }
    save(&state)?;
    if let Some(dir) = &outputs.dir {
        let mut csv = String::from(StepLog::CSV_HEADER);
        csv.push('\n');
        for l in &logs {
            csv.push_str(&l.csv_row());
            csv.push('\n');
        }
        crate::fsio::write_atomic(&dir.join(TRAIN_LOG_FILE), csv.as_bytes())?;
    }
    Ok((state, logs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out sequences per task.
    pub per_task: usize,
    pub mode: PhiMode,
    /// Sequences per forward pass.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            per_task: 200,
            mode: PhiMode::EvalMean,
            batch_size: 8,
        }
    }
}

/// Worker pool honouring `PHILAB_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("PHILAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::config("PHILAB_THREADS", format!("expected a positive integer, got `{v}`")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Domain(format!("thread pool: {e}")))
}

/// Per-token records for every sequence of `dataset`. Sequence `i` gets
/// `seq_id = i`; the record for position `t` (1-based, `t >= 2`) pairs the
/// loss of token `t` with the PHi loss at `t`. Results do not depend on the
/// number of worker threads.
pub fn evaluate(
    model: &SeqModel,
    params: &[f32],
    dataset: &[TaskSequence],
    eval: &EvalConfig,
    seed: u64,
    run_id: &str,
) -> Result<Vec<TokenRecord>> {
    let chunk = eval.batch_size.max(1);
    let d = model.config.model_dim;
    let pool = thread_pool()?;
    let chunks: Vec<(usize, &[TaskSequence])> = dataset.chunks(chunk).enumerate().collect();
    let results: Vec<Result<Vec<TokenRecord>>> = pool.install(|| {
        chunks
            .par_iter()
            .map(|&(ci, seqs)| {
                let toks: Vec<&[u32]> = seqs.iter().map(|s| s.tokens.as_slice()).collect();
                let noise = if eval.mode.needs_noise() {
                    let rows: usize = toks.iter().map(|s| s.len()).sum();
                    let mut rng = stream(seed, Purpose::Noise, u64::MAX - ci as u64);
                    Some((0..rows * d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f32>>())
                } else {
                    None
                };
                let out = model.evaluate_batch(params, &toks, eval.mode, noise.as_deref())?;
                let mut recs = Vec::new();
                for (j, (seq, b)) in seqs.iter().zip(&out).enumerate() {
                    let seq_id = ci * chunk + j;
                    for (i, &nll) in b.nll.iter().enumerate() {
                        recs.push(TokenRecord {
                            run_id: run_id.to_string(),
                            seq_id,
                            t: i + 2,
                            task: seq.task,
                            complexity_bits: seq.complexity_bits,
                            nll_nats: nll,
                            phi_nats: b.phi[i + 1],
                        });
                    }
                }
                Ok(recs)
            })
            .collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}

/// Loads a checkpoint and checks it against `model`.
pub fn load_for_eval(path: &Path, model: &SeqModel) -> Result<Vec<f32>> {
    let ck = load_checkpoint(path)?;
    ck.check_model(model)?;
    Ok(ck.params)
}
