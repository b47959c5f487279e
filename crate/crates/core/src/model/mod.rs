//! Backbones split around the PHi layer.
//!
//! Parameters live in one flat buffer described by a [`ParamLayout`]; a
//! [`SeqModel`] only holds the slots, so the same model runs in `f32`
//! (training) and `f64` (gradient checks). Batches are packed: sequences are
//! stored back to back and every sequence-mixing operation (attention, LSTM
//! recurrence, the prior's shift) respects segment boundaries, so padding
//! never reaches a loss.

pub mod layers;
pub mod loss;
pub mod lstm;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Group, Init, ParamLayout, Slot};
use crate::phi::{GaussianGrads, PhiCache, PhiMode, PhiRegularizer, PhiSlots};
use crate::tensor::{cast_vec, matmul, matmul_at, matmul_bt, Float};
use layers::{Embedding, Packing, RmsNorm, Rope};
use lstm::{lstm_backward, lstm_forward, LstmCache, LstmSlots};
use transformer::{block_backward, block_forward, BlockCache, BlockSlots};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Transformer,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub num_layers: usize,
    pub model_dim: usize,
    /// Heads of the backbone blocks and of the prior block.
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// The PHi layer sits after this many backbone layers.
    pub phi_position: usize,
    pub tie_embeddings: bool,
    pub rope_base: f64,
    pub init_std: f64,
    /// Lower bound on posterior and prior standard deviations.
    pub std_floor: f64,
    /// When set, output biases start at the marginal token distribution:
    /// uniform over content tokens, this probability on the separator (the
    /// last id) and (almost) none on padding (the second-to-last id).
    pub warm_start_sep_prob: Option<f64>,
}

impl ModelConfig {
    pub fn paper_transformer(vocab_size: usize) -> Self {
        ModelConfig {
            arch: Arch::Transformer,
            num_layers: 12,
            model_dim: 768,
            num_heads: 6,
            mlp_dim: 2048,
            vocab_size,
            max_seq_len: 1024,
            phi_position: 6,
            tie_embeddings: false,
            rope_base: 10000.0,
            init_std: 0.02,
            std_floor: 1e-4,
            warm_start_sep_prob: None,
        }
    }

    pub fn paper_lstm(vocab_size: usize) -> Self {
        ModelConfig {
            arch: Arch::Lstm,
            num_layers: 2,
            phi_position: 1,
            ..Self::paper_transformer(vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let e = |k: &str, m: &str| Err(Error::config(format!("model.{k}"), m));
        if self.num_layers < 2 {
            return e("num_layers", "need at least two layers to place the PHi layer between");
        }
        if self.phi_position < 1 || self.phi_position >= self.num_layers {
            return e("phi_position", "must satisfy 1 <= phi_position < num_layers");
        }
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return e("num_heads", "model_dim must be a positive multiple of num_heads");
        }
        if self.head_dim() % 2 != 0 {
            return e("num_heads", "head dimension must be even for rotary positions");
        }
        if self.mlp_dim == 0 {
            return e("mlp_dim", "must be positive");
        }
        if self.vocab_size < 3 {
            return e("vocab_size", "need content tokens plus PAD and SEP");
        }
        if self.max_seq_len == 0 {
            return e("max_seq_len", "must be positive");
        }
        if !(self.init_std > 0.0) {
            return e("init_std", "must be positive");
        }
        if !(self.std_floor > 0.0) {
            return e("std_floor", "must be positive");
        }
        if let Some(p) = self.warm_start_sep_prob {
            if !(p > 0.0 && p < 1.0) {
                return e("warm_start_sep_prob", "must lie in (0, 1)");
            }
        }
        Ok(())
    }

    fn head_bias(&self) -> Init {
        match self.warm_start_sep_prob {
            None => Init::Zeros,
            Some(p) => {
                let content = (self.vocab_size - 2) as f64;
                let mut b = vec![0.0; self.vocab_size];
                b[self.vocab_size - 2] = -10.0;
                b[self.vocab_size - 1] = (p * content / (1.0 - p)).ln();
                Init::Values(b)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenRole {
    /// `h_t`, output of the bottom layers.
    PrePhi,
    /// `h'_t`, output of the PHi decoder.
    PostPhi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates<T> {
    /// `len x dim`, row-major.
    pub values: Vec<T>,
    pub dim: usize,
    pub role: HiddenRole,
}

impl<T> HiddenStates<T> {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Layer {
    Block(BlockSlots),
    Lstm(LstmSlots),
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Block(BlockCache<T>),
    Lstm(LstmCache<T>),
}

/// Per-sequence losses. `nll[i]` is the loss of token `i + 1`; `phi[t]` is
/// the KL at position `t` (dimension sum) and `phi_dim_mean[t]` the same
/// divided by the latent width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_dim_mean: Vec<f64>,
    pub nll_mean: f64,
    pub phi_mean: f64,
    pub phi_dim_mean_mean: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl LossBreakdown {
    pub fn new(nll: Vec<f64>, phi: Vec<f64>, phi_dim_mean: Vec<f64>) -> Self {
        LossBreakdown {
            nll_mean: mean(&nll),
            phi_mean: mean(&phi),
            phi_dim_mean_mean: mean(&phi_dim_mean),
            nll,
            phi,
            phi_dim_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub nll: f64,
    pub phi: f64,
    /// Per-dimension KL floor: the training term uses `max(KL, free_bits)`.
    pub free_bits: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            nll: 1.0,
            phi: 1.0,
            free_bits: 0.0,
        }
    }
}

/// Training objective: `w_nll * mean(nll) + w_phi * mean(phi_term)`, where
/// `phi_term[t]` is the per-token dimension mean of the (floored) KL.
pub fn total_loss(nll: &[f64], phi_term: &[f64], weights: &LossWeights) -> f64 {
    let mut v = weights.nll * mean(nll);
    if weights.phi != 0.0 {
        v += weights.phi * mean(phi_term);
    }
    v
}

/// Optional regularizer with its weight.
#[derive(Clone, Copy)]
pub struct Regularizer<'a> {
    pub term: &'a dyn PhiRegularizer,
    pub weight: f64,
}

/// Result of a forward pass over a packed batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub per_seq: Vec<LossBreakdown>,
    /// Per-token training term `mean_i max(KL_i, free_bits)`, all sequences
    /// concatenated.
    pub phi_term: Vec<f64>,
    pub objective: f64,
    pub regularizer: f64,
}

impl BatchOutput {
    pub fn nll_tokens(&self) -> usize {
        self.per_seq.iter().map(|b| b.nll.len()).sum()
    }

    pub fn phi_tokens(&self) -> usize {
        self.phi_term.len()
    }

    pub fn nll_mean(&self) -> f64 {
        mean(&self.per_seq.iter().flat_map(|b| b.nll.iter().copied()).collect::<Vec<_>>())
    }

    pub fn phi_mean(&self) -> f64 {
        mean(&self.per_seq.iter().flat_map(|b| b.phi.iter().copied()).collect::<Vec<_>>())
    }

    pub fn phi_dim_mean(&self) -> f64 {
        mean(&self.per_seq.iter().flat_map(|b| b.phi_dim_mean.iter().copied()).collect::<Vec<_>>())
    }
}

struct Forward<T> {
    tokens: Vec<u32>,
    packing: Packing,
    bottom: Vec<LayerCache<T>>,
    phi: PhiCache<T>,
    kl: Vec<T>,
    top: Vec<LayerCache<T>>,
    top_out: Vec<T>,
    norm_out: Vec<T>,
    norm_inv: Vec<T>,
    logits: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct SeqModel {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub embed: Embedding,
    pub bottom: Vec<Layer>,
    pub phi: PhiSlots,
    pub top: Vec<Layer>,
    /// Final norm (transformer only).
    pub final_norm: Option<RmsNorm>,
    /// Output weights, `d x vocab`; `None` when tied to the embedding.
    pub head_w: Option<Slot>,
    pub head_b: Slot,
}

impl SeqModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.model_dim;
        let std = c.init_std;
        let resid = std / (2.0 * c.num_layers as f64).sqrt();
        let mut layout = ParamLayout::new();
        let embed = Embedding {
            table: layout.push("embed", c.vocab_size, d, Group::Embedding, Init::Normal(std)),
        };
        let make_layer = |layout: &mut ParamLayout, i: usize, group: Group| match c.arch {
            Arch::Transformer => Layer::Block(BlockSlots::register(
                layout,
                &format!("layers.{i}"),
                group,
                d,
                c.mlp_dim,
                c.num_heads,
                std,
                resid,
            )),
            Arch::Lstm => {
                // recurrent weights need a larger scale than 0.02 to carry state
                let lstm_std = 1.0 / (d as f64).sqrt();
                Layer::Lstm(LstmSlots::register(layout, &format!("layers.{i}"), group, d, d, lstm_std))
            }
        };
        let bottom: Vec<Layer> = (0..c.phi_position).map(|i| make_layer(&mut layout, i, Group::Bottom)).collect();
        let phi = PhiSlots::register(&mut layout, d, c.mlp_dim, c.num_heads, std, resid, c.std_floor);
        let top: Vec<Layer> = (c.phi_position..c.num_layers)
            .map(|i| make_layer(&mut layout, i, Group::Top))
            .collect();
        let final_norm = match c.arch {
            Arch::Transformer => Some(RmsNorm {
                g: layout.push("final_norm", 1, d, Group::Head, Init::Const(1.0)),
            }),
            Arch::Lstm => None,
        };
        let head_w = if c.tie_embeddings {
            None
        } else {
            let init = if c.warm_start_sep_prob.is_some() {
                Init::Zeros
            } else {
                Init::Normal(std)
            };
            Some(layout.push("head.w", d, c.vocab_size, Group::Head, init))
        };
        let head_b = layout.push("head.b", 1, c.vocab_size, Group::Head, c.head_bias());
        Ok(SeqModel {
            config,
            layout,
            embed,
            bottom,
            phi,
            top,
            final_norm,
            head_w,
            head_b,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    pub fn init_params<T: Float>(&self, rng: &mut crate::rng::Rng) -> Vec<T> {
        self.layout.init(rng)
    }

    fn rope<T: Float>(&self, len: usize) -> Rope<T> {
        Rope::new(len.max(1), self.config.head_dim(), self.config.rope_base)
    }

    fn check_lens(&self, lens: &[usize]) -> Result<()> {
        for &len in lens {
            if len > self.config.max_seq_len {
                return Err(Error::Length {
                    len,
                    max: self.config.max_seq_len,
                });
            }
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(t) => Err(Error::Contract(format!(
                "token {t} outside vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn run_layers<T: Float>(
        layers: &[Layer],
        p: &[T],
        mut x: Vec<T>,
        packing: &Packing,
        rope: &Rope<T>,
    ) -> (Vec<T>, Vec<LayerCache<T>>) {
        let mut caches = Vec::with_capacity(layers.len());
        for layer in layers {
            let (y, cache) = match layer {
                Layer::Block(b) => {
                    let (y, c) = block_forward(b, p, x, packing, rope);
                    (y, LayerCache::Block(c))
                }
                Layer::Lstm(l) => {
                    let (y, c) = lstm_forward(l, p, x, packing);
                    (y, LayerCache::Lstm(c))
                }
            };
            caches.push(cache);
            x = y;
        }
        (x, caches)
    }

    fn back_layers<T: Float>(
        layers: &[Layer],
        p: &[T],
        grads: &mut [T],
        caches: &[LayerCache<T>],
        mut dy: Vec<T>,
        packing: &Packing,
        rope: &Rope<T>,
    ) -> Vec<T> {
        for (layer, cache) in layers.iter().zip(caches).rev() {
            dy = match (layer, cache) {
                (Layer::Block(b), LayerCache::Block(c)) => block_backward(b, p, grads, c, &dy, packing, rope),
                (Layer::Lstm(l), LayerCache::Lstm(c)) => lstm_backward(l, p, grads, c, &dy, packing),
                _ => unreachable!("layer/cache kinds always match"),
            };
        }
        dy
    }

    fn head_forward<T: Float>(&self, p: &[T], x: &[T], n: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (normed, inv) = match self.final_norm {
            Some(norm) => norm.forward(p, x),
            None => (x.to_vec(), Vec::new()),
        };
        let v = self.config.vocab_size;
        let d = self.config.model_dim;
        let mut logits = vec![T::ZERO; n * v];
        match self.head_w {
            Some(w) => matmul(&mut logits, &normed, w.of(p), n, d, v, false),
            None => matmul_bt(&mut logits, &normed, self.embed.table.of(p), n, d, v, false),
        }
        let b = self.head_b.of(p);
        for row in logits.chunks_exact_mut(v) {
            crate::tensor::add_into(row, b);
        }
        (logits, normed, inv)
    }

    /// Bottom layers on one sequence: `h_t = B(x_1..x_t)`.
    pub fn bottom_forward<T: Float>(&self, p: &[T], tokens: &[u32]) -> Result<HiddenStates<T>> {
        self.check_lens(&[tokens.len()])?;
        self.check_tokens(tokens)?;
        let packing = Packing::single(tokens.len());
        let rope = self.rope(tokens.len());
        let x = self.embed.forward(p, tokens);
        let (h, _) = Self::run_layers(&self.bottom, p, x, &packing, &rope);
        Ok(HiddenStates {
            values: h,
            dim: self.config.model_dim,
            role: HiddenRole::PrePhi,
        })
    }

    /// Top layers and output head on decoded states of one sequence. Row `t`
    /// of the result holds the logits for token `t + 1`.
    pub fn top_forward<T: Float>(&self, p: &[T], hidden: &HiddenStates<T>) -> Result<Vec<T>> {
        if hidden.role != HiddenRole::PostPhi {
            return Err(Error::Contract("top layers take post-PHi hidden states".into()));
        }
        if hidden.dim != self.config.model_dim {
            return Err(Error::Contract("hidden width differs from model_dim".into()));
        }
        let n = hidden.len();
        self.check_lens(&[n])?;
        let packing = Packing::single(n);
        let rope = self.rope(n);
        let (y, _) = Self::run_layers(&self.top, p, hidden.values.clone(), &packing, &rope);
        Ok(self.head_forward(p, &y, n).0)
    }

    /// Whole model on one sequence in evaluation mode; logits row `t`
    /// predicts token `t + 1`.
    pub fn logits<T: Float>(&self, p: &[T], tokens: &[u32], mode: PhiMode, noise: Option<&[T]>) -> Result<Vec<T>> {
        let f = self.forward(p, &[tokens], mode, noise)?;
        Ok(f.logits)
    }

    fn forward<T: Float>(&self, p: &[T], seqs: &[&[u32]], mode: PhiMode, noise: Option<&[T]>) -> Result<Forward<T>> {
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        self.check_lens(&lens)?;
        let tokens: Vec<u32> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        self.check_tokens(&tokens)?;
        let packing = Packing::from_lens(&lens);
        let n = packing.total();
        let rope = self.rope(packing.max_len());
        if let Some(noise) = noise {
            if noise.len() != n * self.config.model_dim {
                return Err(Error::Contract("noise does not match batch size".into()));
            }
        }

        let x = self.embed.forward(p, &tokens);
        let (h, bottom) = Self::run_layers(&self.bottom, p, x, &packing, &rope);
        let out = self.phi.forward(p, h, &packing, &rope, mode, noise)?;
        let (top_out, top) = Self::run_layers(&self.top, p, out.hidden, &packing, &rope);
        let (logits, norm_out, norm_inv) = self.head_forward(p, &top_out, n);
        Ok(Forward {
            tokens,
            packing,
            bottom,
            phi: out.cache,
            kl: out.kl,
            top,
            top_out,
            norm_out,
            norm_inv,
            logits,
        })
    }

    /// Per-sequence losses without gradients.
    pub fn evaluate_batch<T: Float>(
        &self,
        p: &[T],
        seqs: &[&[u32]],
        mode: PhiMode,
        noise: Option<&[T]>,
    ) -> Result<Vec<LossBreakdown>> {
        let f = self.forward(p, seqs, mode, noise)?;
        let v = self.config.vocab_size;
        let d = self.config.model_dim;
        let mut out = Vec::with_capacity(seqs.len());
        for (start, len) in f.packing.segments() {
            let nll = if len > 1 {
                loss::next_token_nll(
                    &f.logits[start * v..(start + len - 1) * v],
                    v,
                    &f.tokens[start + 1..start + len],
                )?
            } else {
                Vec::new()
            };
            let (phi, dm) = kl_rows(&f.kl[start * d..(start + len) * d], d);
            out.push(LossBreakdown::new(nll, phi, dm));
        }
        check_finite(&out)?;
        Ok(out)
    }

    /// Objective and its gradient (accumulated into `grads`) over a packed
    /// batch. NLL is averaged over all predicted tokens of the batch and the
    /// PHi training term over all positions.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad<T: Float>(
        &self,
        p: &[T],
        grads: &mut [T],
        seqs: &[&[u32]],
        mode: PhiMode,
        noise: Option<&[T]>,
        weights: &LossWeights,
        regularizer: Option<Regularizer<'_>>,
    ) -> Result<BatchOutput> {
        if grads.len() != p.len() {
            return Err(Error::Contract("gradient buffer does not match parameters".into()));
        }
        let f = self.forward(p, seqs, mode, noise)?;
        let v = self.config.vocab_size;
        let d = self.config.model_dim;
        let n = f.packing.total();
        let rope = self.rope(f.packing.max_len());
        let n_nll: usize = f.packing.segments().map(|(_, l)| l.saturating_sub(1)).sum();
        let n_kl = n;

        // NLL rows and their gradient
        let mut dlogits = vec![T::ZERO; n * v];
        let w_nll = T::from_f64(if n_nll > 0 { weights.nll / n_nll as f64 } else { 0.0 });
        let mut per_seq = Vec::with_capacity(seqs.len());
        let mut phi_term = Vec::with_capacity(n);
        let floor = T::from_f64(weights.free_bits);
        let w_kl = T::from_f64(if n_kl > 0 { weights.phi / (n_kl * d) as f64 } else { 0.0 });
        let mut dkl = vec![T::ZERO; n * d];
        for (start, len) in f.packing.segments() {
            let mut nll = Vec::with_capacity(len.saturating_sub(1));
            for t in start..(start + len).saturating_sub(1) {
                let row = &f.logits[t * v..(t + 1) * v];
                let target = f.tokens[t + 1] as usize;
                let l = loss::nll_with_grad(row, target, w_nll, &mut dlogits[t * v..(t + 1) * v]);
                nll.push(l.to_f64());
            }
            let (phi, dm) = kl_rows(&f.kl[start * d..(start + len) * d], d);
            for t in start..start + len {
                let mut term = 0.0;
                for k in t * d..(t + 1) * d {
                    let kl = f.kl[k];
                    if kl >= floor {
                        term += kl.to_f64();
                        dkl[k] = w_kl;
                    } else {
                        term += weights.free_bits;
                    }
                }
                phi_term.push(term / d as f64);
            }
            per_seq.push(LossBreakdown::new(nll, phi, dm));
        }
        let all_nll: Vec<f64> = per_seq.iter().flat_map(|b| b.nll.iter().copied()).collect();
        let mut objective = total_loss(&all_nll, &phi_term, weights);

        let mut reg_value = 0.0;
        let extra = match regularizer {
            Some(r) if r.weight != 0.0 => {
                let post = f.phi.posterior();
                let prior = f.phi.prior();
                let to64 = |g: &crate::phi::GaussianSeq<T>| crate::phi::GaussianSeq {
                    means: cast_vec(&g.means),
                    stds: cast_vec(&g.stds),
                    rows: g.rows,
                    dim: g.dim,
                    role: g.role,
                };
                let z: Vec<f64> = cast_vec(&f.phi.latents().values);
                let (value, g) = r.term.evaluate(&to64(post), &to64(prior), &z, &f.packing);
                reg_value = value;
                let scale = r.weight / n_kl.max(1) as f64;
                objective += scale * value;
                let sc = |v: &[f64]| v.iter().map(|&x| T::from_f64(x * scale)).collect::<Vec<T>>();
                Some(GaussianGrads {
                    post_mean: sc(&g.post_mean),
                    post_std: sc(&g.post_std),
                    prior_mean: sc(&g.prior_mean),
                    prior_std: sc(&g.prior_std),
                    latents: sc(&g.latents),
                })
            }
            _ => None,
        };
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("objective {objective}")));
        }

        // head
        let dnormed = {
            if let Some(w) = self.head_w {
                matmul_at(w.of_mut(grads), &f.norm_out, &dlogits, d, n, v, true);
            } else {
                // tied: logits = normed E^T, dE += dlogits^T normed
                matmul_at(self.embed.table.of_mut(grads), &dlogits, &f.norm_out, v, n, d, true);
            }
            let db = self.head_b.of_mut(grads);
            for row in dlogits.chunks_exact(v) {
                crate::tensor::add_into(db, row);
            }
            let mut dx = vec![T::ZERO; n * d];
            match self.head_w {
                Some(w) => matmul_bt(&mut dx, &dlogits, w.of(p), n, v, d, false),
                None => matmul(&mut dx, &dlogits, self.embed.table.of(p), n, v, d, false),
            }
            dx
        };
        let dtop = match self.final_norm {
            Some(norm) => norm.backward(p, grads, &f.top_out, &f.norm_inv, &dnormed),
            None => dnormed,
        };
        let dh_prime = Self::back_layers(&self.top, p, grads, &f.top, dtop, &f.packing, &rope);
        let dh = self.phi.backward(p, grads, &f.phi, &dh_prime, &dkl, extra.as_ref(), &rope);
        let dx = Self::back_layers(&self.bottom, p, grads, &f.bottom, dh, &f.packing, &rope);
        self.embed.backward(grads, &f.tokens, &dx);

        check_finite(&per_seq)?;
        Ok(BatchOutput {
            per_seq,
            phi_term,
            objective,
            regularizer: reg_value,
        })
    }

    /// The PHi-layer input for one sequence, for inspection.
    pub fn phi_cache<T: Float>(&self, p: &[T], tokens: &[u32], mode: PhiMode, noise: Option<&[T]>) -> Result<PhiCache<T>> {
        Ok(self.forward(p, &[tokens], mode, noise)?.phi)
    }
}

/// Dimension sums and dimension means of an `n x d` KL block.
fn kl_rows<T: Float>(kl: &[T], d: usize) -> (Vec<f64>, Vec<f64>) {
    let sums: Vec<f64> = kl.chunks_exact(d).map(|r| r.iter().map(|v| v.to_f64()).sum()).collect();
    let means = sums.iter().map(|s| s / d as f64).collect();
    (sums, means)
}

fn check_finite(out: &[LossBreakdown]) -> Result<()> {
    for (i, b) in out.iter().enumerate() {
        if b.nll.iter().chain(&b.phi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("loss of sequence {i} in batch")));
        }
    }
    Ok(())
}

/// One pre-norm transformer block on a single sequence.
pub fn transformer_block<T: Float>(blk: &BlockSlots, p: &[T], states: &[T], rope: &Rope<T>) -> Vec<T> {
    let n = states.len() / blk.dim();
    block_forward(blk, p, states.to_vec(), &Packing::single(n), rope).0
}

