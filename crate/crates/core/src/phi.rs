//! The PHi layer.
//!
//! A hidden state `h_t` from the bottom half of the network is encoded into a
//! diagonal-Gaussian posterior `q(z_t | h_t)`, a latent is drawn with the
//! reparameterization trick, and the decoder maps it back to `h'_t` for the
//! top half. An autoregressive prior predicts `z_t` from `z_1..z_{t-1}`
//! (position 1 sees a learned initial query only). The per-token PHi loss is
//! `KL(q_t || p_t)` summed over latent dimensions, in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{Linear, Packing, RmsNorm, Rope};
use crate::model::transformer::{block_backward, block_forward, BlockCache, BlockSlots};
use crate::params::{Group, Init, ParamLayout, Slot};
use crate::tensor::{sigmoid, softplus, Float};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianRole {
    Posterior,
    Prior,
}

/// Per-timestep diagonal Gaussians, `rows x dim` means and standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSeq<T> {
    pub means: Vec<T>,
    pub stds: Vec<T>,
    pub rows: usize,
    pub dim: usize,
    pub role: GaussianRole,
}

impl<T: Float> GaussianSeq<T> {
    pub fn new(means: Vec<T>, stds: Vec<T>, dim: usize, role: GaussianRole) -> Result<Self> {
        if means.len() != stds.len() || dim == 0 || means.len() % dim != 0 {
            return Err(Error::Contract("gaussian means/stds shape mismatch".into()));
        }
        Ok(GaussianSeq {
            rows: means.len() / dim,
            means,
            stds,
            dim,
            role,
        })
    }
}

/// Latent sample `values = means + stds * noise`; `noise` is `None` when the
/// posterior means were used directly.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeq<T> {
    pub values: Vec<T>,
    pub noise: Option<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// Sample latents with the supplied noise.
    Train,
    /// Feed posterior means to both the decoder and the prior.
    EvalMean,
    /// Sample latents at evaluation time (ablation).
    EvalSampled,
}

impl PhiMode {
    pub fn needs_noise(self) -> bool {
        !matches!(self, PhiMode::EvalMean)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PhiSlots {
    pub enc_mean: Linear,
    pub enc_std: Linear,
    pub dec: Linear,
    pub prior_init: Slot,
    pub prior_block: BlockSlots,
    pub prior_norm: RmsNorm,
    /// `d -> 2d`: prior means then pre-activation stds.
    pub prior_head: Linear,
    pub std_floor: f64,
}

/// Diagonal-Gaussian KL, elementwise:
/// `ln(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2`.
#[inline]
pub fn kl_elem<T: Float>(mq: T, sq: T, mp: T, sp: T) -> T {
    let half = T::from_f64(0.5);
    let diff = mq - mp;
    (sp / sq).ln() + (sq * sq + diff * diff) / (T::from_f64(2.0) * sp * sp) - half
}

/// Elementwise KL between posterior and prior, `rows x dim` nats.
pub fn kl_divergence<T: Float>(post: &GaussianSeq<T>, prior: &GaussianSeq<T>) -> Result<Vec<T>> {
    if post.rows != prior.rows || post.dim != prior.dim {
        return Err(Error::Contract("posterior and prior shapes differ".into()));
    }
    if post.stds.iter().chain(&prior.stds).any(|&s| !(s > T::ZERO)) {
        return Err(Error::Contract("non-positive standard deviation".into()));
    }
    Ok(post
        .means
        .iter()
        .zip(&post.stds)
        .zip(prior.means.iter().zip(&prior.stds))
        .map(|((&mq, &sq), (&mp, &sp))| kl_elem(mq, sq, mp, sp))
        .collect())
}

/// `z = mean + std * noise`.
pub fn sample_latent<T: Float>(post: &GaussianSeq<T>, noise: &[T]) -> Result<LatentSeq<T>> {
    if noise.len() != post.means.len() {
        return Err(Error::Contract(format!(
            "noise has {} entries, posterior has {}",
            noise.len(),
            post.means.len()
        )));
    }
    let values = post
        .means
        .iter()
        .zip(&post.stds)
        .zip(noise)
        .map(|((&m, &s), &e)| m + s * e)
        .collect();
    Ok(LatentSeq {
        values,
        noise: Some(noise.to_vec()),
    })
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct PhiCache<T> {
    h: Vec<T>,
    post: GaussianSeq<T>,
    post_pre: Vec<T>,
    z: LatentSeq<T>,
    prior: GaussianSeq<T>,
    prior_pre: Vec<T>,
    prior_in: Vec<T>,
    block: BlockCache<T>,
    block_out: Vec<T>,
    norm_out: Vec<T>,
    norm_inv: Vec<T>,
    packing: Packing,
}

impl<T: Float> PhiCache<T> {
    pub fn posterior(&self) -> &GaussianSeq<T> {
        &self.post
    }

    pub fn prior(&self) -> &GaussianSeq<T> {
        &self.prior
    }

    pub fn latents(&self) -> &LatentSeq<T> {
        &self.z
    }
}

/// Output of [`PhiSlots::forward`].
#[derive(Debug, Clone)]
pub struct PhiOutput<T> {
    /// Decoded hidden states `h'`, `n x d`.
    pub hidden: Vec<T>,
    /// Elementwise KL, `n x d` nats.
    pub kl: Vec<T>,
    pub cache: PhiCache<T>,
}

impl PhiSlots {
    pub fn register(layout: &mut ParamLayout, dim: usize, mlp_dim: usize, heads: usize, std: f64, resid_std: f64, std_floor: f64) -> Self {
        let g = Group::Phi;
        let lin = |layout: &mut ParamLayout, name: &str, i: usize, o: usize| Linear {
            w: layout.push(format!("phi.{name}.w"), i, o, g, Init::Normal(std)),
            b: Some(layout.push(format!("phi.{name}.b"), 1, o, g, Init::Zeros)),
        };
        let enc_mean = lin(layout, "enc_mean", dim, dim);
        let enc_std = lin(layout, "enc_std", dim, dim);
        let dec = lin(layout, "dec", dim, dim);
        let prior_init = layout.push("phi.prior.init", 1, dim, g, Init::Normal(std));
        let prior_block = BlockSlots::register(layout, "phi.prior.block", g, dim, mlp_dim, heads, std, resid_std);
        let prior_norm = RmsNorm {
            g: layout.push("phi.prior.norm", 1, dim, g, Init::Const(1.0)),
        };
        let prior_head = lin(layout, "prior.head", dim, 2 * dim);
        PhiSlots {
            enc_mean,
            enc_std,
            dec,
            prior_init,
            prior_block,
            prior_norm,
            prior_head,
            std_floor,
        }
    }

    pub fn dim(&self) -> usize {
        self.dec.out_dim()
    }

    fn positive<T: Float>(&self, pre: T) -> T {
        softplus(pre).max(T::from_f64(self.std_floor))
    }

    /// d(std)/d(pre) for the floored softplus.
    fn positive_grad<T: Float>(&self, pre: T) -> T {
        if softplus(pre) >= T::from_f64(self.std_floor) {
            sigmoid(pre)
        } else {
            T::ZERO
        }
    }

    fn encode<T: Float>(&self, p: &[T], h: &[T], n: usize) -> (GaussianSeq<T>, Vec<T>) {
        let means = self.enc_mean.forward(p, h, n);
        let pre = self.enc_std.forward(p, h, n);
        let stds = pre.iter().map(|&v| self.positive(v)).collect();
        let post = GaussianSeq {
            means,
            stds,
            rows: n,
            dim: self.dim(),
            role: GaussianRole::Posterior,
        };
        (post, pre)
    }

    /// Pointwise posterior `q(z_t | h_t)`.
    pub fn encode_posterior<T: Float>(&self, p: &[T], h: &[T]) -> GaussianSeq<T> {
        self.encode(p, h, h.len() / self.dim()).0
    }

    /// Pointwise affine decoder `h'_t = a(z_t)`.
    pub fn decode_latent<T: Float>(&self, p: &[T], z: &[T]) -> Vec<T> {
        self.dec.forward(p, z, z.len() / self.dim())
    }

    /// Shifts latents right by one within each segment, inserting the learned
    /// initial query at every segment start.
    fn prior_inputs<T: Float>(&self, p: &[T], z: &[T], packing: &Packing) -> Vec<T> {
        let d = self.dim();
        let init = self.prior_init.of(p);
        let mut u = vec![T::ZERO; z.len()];
        for (start, len) in packing.segments() {
            if len == 0 {
                continue;
            }
            u[start * d..(start + 1) * d].copy_from_slice(init);
            u[(start + 1) * d..(start + len) * d].copy_from_slice(&z[start * d..(start + len - 1) * d]);
        }
        u
    }

    #[allow(clippy::type_complexity)]
    fn prior_forward_cached<T: Float>(
        &self,
        p: &[T],
        z: &[T],
        packing: &Packing,
        rope: &Rope<T>,
    ) -> (GaussianSeq<T>, Vec<T>, Vec<T>, BlockCache<T>, Vec<T>, Vec<T>, Vec<T>) {
        let d = self.dim();
        let n = packing.total();
        let u = self.prior_inputs(p, z, packing);
        let (block_out, block) = block_forward(&self.prior_block, p, u.clone(), packing, rope);
        let (norm_out, norm_inv) = self.prior_norm.forward(p, &block_out);
        let head = self.prior_head.forward(p, &norm_out, n);
        let mut means = Vec::with_capacity(n * d);
        let mut pre = Vec::with_capacity(n * d);
        for row in head.chunks_exact(2 * d) {
            means.extend_from_slice(&row[..d]);
            pre.extend_from_slice(&row[d..]);
        }
        let stds = pre.iter().map(|&v| self.positive(v)).collect();
        let prior = GaussianSeq {
            means,
            stds,
            rows: n,
            dim: d,
            role: GaussianRole::Prior,
        };
        (prior, pre, u, block, block_out, norm_out, norm_inv)
    }

    /// Autoregressive prior `p(z_t | z_<t)` for every position.
    pub fn prior_forward<T: Float>(&self, p: &[T], z: &[T], packing: &Packing, rope: &Rope<T>) -> GaussianSeq<T> {
        self.prior_forward_cached(p, z, packing, rope).0
    }

    /// encode -> sample (or mean) -> prior on the same latents -> decode -> KL.
    pub fn forward<T: Float>(
        &self,
        p: &[T],
        h: Vec<T>,
        packing: &Packing,
        rope: &Rope<T>,
        mode: PhiMode,
        noise: Option<&[T]>,
    ) -> Result<PhiOutput<T>> {
        let n = packing.total();
        let (post, post_pre) = self.encode(p, &h, n);
        let z = if mode.needs_noise() {
            let noise = noise.ok_or_else(|| Error::Contract(format!("{mode:?} needs noise")))?;
            sample_latent(&post, noise)?
        } else {
            LatentSeq {
                values: post.means.clone(),
                noise: None,
            }
        };
        let (prior, prior_pre, prior_in, block, block_out, norm_out, norm_inv) =
            self.prior_forward_cached(p, &z.values, packing, rope);
        let hidden = self.dec.forward(p, &z.values, n);
        let kl = kl_divergence(&post, &prior)?;
        Ok(PhiOutput {
            hidden,
            kl,
            cache: PhiCache {
                h,
                post,
                post_pre,
                z,
                prior,
                prior_pre,
                prior_in,
                block,
                block_out,
                norm_out,
                norm_inv,
                packing: packing.clone(),
            },
        })
    }

    /// Backward pass. `dhidden` is the gradient w.r.t. `h'`, `dkl` the
    /// gradient w.r.t. every elementwise KL term, and `extra` optional direct
    /// gradients on the Gaussian parameters and latents (from a regularizer).
    /// Returns the gradient w.r.t. the input hidden states.
    pub fn backward<T: Float>(
        &self,
        p: &[T],
        grads: &mut [T],
        cache: &PhiCache<T>,
        dhidden: &[T],
        dkl: &[T],
        extra: Option<&GaussianGrads<T>>,
        rope: &Rope<T>,
    ) -> Vec<T> {
        let d = self.dim();
        let packing = &cache.packing;
        let n = packing.total();
        let post = &cache.post;
        let prior = &cache.prior;

        let mut dz = self.dec.backward(p, grads, &cache.z.values, dhidden, n);

        let mut dmq = vec![T::ZERO; n * d];
        let mut dsq = vec![T::ZERO; n * d];
        let mut dmp = vec![T::ZERO; n * d];
        let mut dsp = vec![T::ZERO; n * d];
        for k in 0..n * d {
            let (mq, sq, mp, sp) = (post.means[k], post.stds[k], prior.means[k], prior.stds[k]);
            let g = dkl[k];
            let diff = mq - mp;
            let inv_var = T::ONE / (sp * sp);
            dmq[k] = g * diff * inv_var;
            dmp[k] = -dmq[k];
            dsq[k] = g * (sq * inv_var - T::ONE / sq);
            dsp[k] = g * (T::ONE / sp - (sq * sq + diff * diff) * inv_var / sp);
        }
        if let Some(e) = extra {
            crate::tensor::add_into(&mut dmq, &e.post_mean);
            crate::tensor::add_into(&mut dsq, &e.post_std);
            crate::tensor::add_into(&mut dmp, &e.prior_mean);
            crate::tensor::add_into(&mut dsp, &e.prior_std);
            crate::tensor::add_into(&mut dz, &e.latents);
        }

        // prior head -> norm -> block -> shifted inputs
        let mut dhead = vec![T::ZERO; n * 2 * d];
        for (t, row) in dhead.chunks_exact_mut(2 * d).enumerate() {
            for j in 0..d {
                let k = t * d + j;
                row[j] = dmp[k];
                row[d + j] = dsp[k] * self.positive_grad(cache.prior_pre[k]);
            }
        }
        let dnorm = self.prior_head.backward(p, grads, &cache.norm_out, &dhead, n);
        let dblock = self.prior_norm.backward(p, grads, &cache.block_out, &cache.norm_inv, &dnorm);
        let du = block_backward(&self.prior_block, p, grads, &cache.block, &dblock, packing, rope);
        let _ = &cache.prior_in;
        {
            let dinit = self.prior_init.of_mut(grads);
            for (start, len) in packing.segments() {
                if len == 0 {
                    continue;
                }
                crate::tensor::add_into(dinit, &du[start * d..(start + 1) * d]);
                crate::tensor::add_into(&mut dz[start * d..(start + len - 1) * d], &du[(start + 1) * d..(start + len) * d]);
            }
        }

        // z = mq + sq * eps
        crate::tensor::add_into(&mut dmq, &dz);
        if let Some(eps) = &cache.z.noise {
            for k in 0..n * d {
                dsq[k] += dz[k] * eps[k];
            }
        }
        for (k, v) in dsq.iter_mut().enumerate() {
            *v *= self.positive_grad(cache.post_pre[k]);
        }
        let mut dh = self.enc_mean.backward(p, grads, &cache.h, &dmq, n);
        let dh2 = self.enc_std.backward(p, grads, &cache.h, &dsq, n);
        crate::tensor::add_into(&mut dh, &dh2);
        dh
    }
}

/// Direct gradients on the posterior/prior parameters and latents.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads<T> {
    pub post_mean: Vec<T>,
    pub post_std: Vec<T>,
    pub prior_mean: Vec<T>,
    pub prior_std: Vec<T>,
    pub latents: Vec<T>,
}

impl<T: Float> GaussianGrads<T> {
    pub fn zeros(len: usize) -> Self {
        GaussianGrads {
            post_mean: vec![T::ZERO; len],
            post_std: vec![T::ZERO; len],
            prior_mean: vec![T::ZERO; len],
            prior_std: vec![T::ZERO; len],
            latents: vec![T::ZERO; len],
        }
    }
}

/// Additional anti-collapse objective evaluated on one packed batch.
///
/// Implementations return a value (summed over positions) and its gradients
/// w.r.t. the Gaussian parameters and latents; the trainer scales both by
/// `weight / num_positions`.
pub trait PhiRegularizer: Send + Sync {
    fn name(&self) -> &str;

    fn evaluate(&self, post: &GaussianSeq<f64>, prior: &GaussianSeq<f64>, latents: &[f64], packing: &Packing) -> (f64, GaussianGrads<f64>);
}

/// Sum of squared posterior means; a minimal [`PhiRegularizer`] used to
/// exercise the hook.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanPenalty;

impl PhiRegularizer for MeanPenalty {
    fn name(&self) -> &str {
        "mean_penalty"
    }

    fn evaluate(&self, post: &GaussianSeq<f64>, _prior: &GaussianSeq<f64>, _latents: &[f64], _packing: &Packing) -> (f64, GaussianGrads<f64>) {
        let mut g = GaussianGrads::zeros(post.means.len());
        let mut v = 0.0;
        for (k, &m) in post.means.iter().enumerate() {
            v += m * m;
            g.post_mean[k] = 2.0 * m;
        }
        (v, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand_distr::{Distribution, StandardNormal};

    fn layer(dim: usize) -> (PhiSlots, Vec<f64>, Rope<f64>) {
        let mut layout = ParamLayout::new();
        let phi = PhiSlots::register(&mut layout, dim, 2 * dim, 2, 0.3, 0.3, 1e-4);
        let p = layout.init(&mut stream(11, Purpose::Init, 0));
        (phi, p, Rope::new(64, dim / 2, 10000.0))
    }

    fn hidden(n: usize, d: usize, scale: f64) -> Vec<f64> {
        (0..n * d).map(|i| ((i * 37 % 101) as f64 / 50.0 - 1.0) * scale).collect()
    }

    #[test]
    fn zero_encoder_gives_unit_softplus() {
        let (phi, mut p, _) = layer(4);
        for s in [phi.enc_mean.w, phi.enc_mean.b.unwrap(), phi.enc_std.w, phi.enc_std.b.unwrap()] {
            s.of_mut(&mut p).iter_mut().for_each(|v| *v = 0.0);
        }
        let q = phi.encode_posterior(&p, &hidden(3, 4, 1.0));
        assert!(q.means.iter().all(|&m| m == 0.0));
        assert!(q.stds.iter().all(|&s| s == std::f64::consts::LN_2));
    }

    #[test]
    fn encoder_is_pointwise_and_finite() {
        let (phi, p, _) = layer(4);
        let h = hidden(5, 4, 1.0);
        let q = phi.encode_posterior(&p, &h);
        let mut rev = Vec::new();
        for t in (0..5).rev() {
            rev.extend_from_slice(&h[t * 4..(t + 1) * 4]);
        }
        let qr = phi.encode_posterior(&p, &rev);
        for t in 0..5 {
            assert_eq!(q.means[t * 4..(t + 1) * 4], qr.means[(4 - t) * 4..(5 - t) * 4]);
        }
        for scale in [1e-3, 1.0, 1e2, 1e3] {
            let q = phi.encode_posterior(&p, &hidden(5, 4, scale));
            assert!(q.means.iter().chain(&q.stds).all(|v| v.is_finite()));
            assert!(q.stds.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn zero_noise_returns_means() {
        let post = GaussianSeq::new(vec![1.0, -2.0], vec![0.5, 3.0], 2, GaussianRole::Posterior).unwrap();
        let z = sample_latent(&post, &[0.0, 0.0]).unwrap();
        assert_eq!(z.values, post.means);
        assert!(matches!(sample_latent(&post, &[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn reparameterization_derivatives() {
        let eps = 0.7;
        let f = |m: f64, s: f64| {
            let post = GaussianSeq::new(vec![m], vec![s], 1, GaussianRole::Posterior).unwrap();
            sample_latent(&post, &[eps]).unwrap().values[0]
        };
        let h = 1e-6;
        assert!(((f(1.0 + h, 2.0) - f(1.0 - h, 2.0)) / (2.0 * h) - 1.0).abs() < 1e-8);
        assert!(((f(1.0, 2.0 + h) - f(1.0, 2.0 - h)) / (2.0 * h) - eps).abs() < 1e-8);
    }

    #[test]
    fn monte_carlo_latent_mean() {
        let mut rng = stream(5, Purpose::Noise, 0);
        let (mu, sigma, n) = (0.8, 1.7, 100_000);
        let post = GaussianSeq::new(vec![mu; n], vec![sigma; n], 1, GaussianRole::Posterior).unwrap();
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = sample_latent(&post, &noise).unwrap();
        let mean = z.values.iter().sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn kl_closed_form_cases() {
        let g = |m: f64, s: f64, role| GaussianSeq::new(vec![m], vec![s], 1, role).unwrap();
        let p = g(0.0, 1.0, GaussianRole::Prior);
        assert_eq!(kl_divergence(&g(0.0, 1.0, GaussianRole::Posterior), &p).unwrap()[0], 0.0);
        assert!((kl_divergence(&g(1.0, 1.0, GaussianRole::Posterior), &p).unwrap()[0] - 0.5).abs() < 1e-15);
        let wide = kl_divergence(&g(0.0, 2.0, GaussianRole::Posterior), &p).unwrap()[0];
        assert!((wide - 0.5 * (4.0 - 1.0 - 4f64.ln())).abs() < 1e-12);
        assert!((wide - 0.8069).abs() < 1e-4);
        assert!(matches!(
            kl_divergence(&g(0.0, 0.0, GaussianRole::Posterior), &p),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn prior_is_strictly_causal() {
        let (phi, p, rope) = layer(4);
        let n = 6;
        let z = hidden(n, 4, 1.0);
        let packing = Packing::single(n);
        let base = phi.prior_forward(&p, &z, &packing, &rope);
        assert!(base.stds.iter().all(|&s| s > 0.0));
        for k in 0..n {
            let mut z2 = z.clone();
            z2[k * 4..(k + 1) * 4].iter_mut().for_each(|v| *v += 3.0);
            let out = phi.prior_forward(&p, &z2, &packing, &rope);
            for t in 0..n {
                let same = out.means[t * 4..(t + 1) * 4] == base.means[t * 4..(t + 1) * 4]
                    && out.stds[t * 4..(t + 1) * 4] == base.stds[t * 4..(t + 1) * 4];
                assert_eq!(same, t <= k, "perturb z_{k}, position {t}");
            }
        }
    }

    #[test]
    fn decoder_identity_and_linearity() {
        let (phi, mut p, _) = layer(3);
        let w = phi.dec.w.of_mut(&mut p);
        w.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        phi.dec.b.unwrap().of_mut(&mut p).iter_mut().for_each(|v| *v = 0.0);
        let z = hidden(4, 3, 1.0);
        assert_eq!(phi.decode_latent(&p, &z), z);

        let (phi, mut p, _) = layer(3);
        phi.dec.b.unwrap().of_mut(&mut p).iter_mut().for_each(|v| *v = 0.0);
        let a = phi.decode_latent(&p, &z);
        let z2: Vec<f64> = z.iter().map(|v| 2.5 * v).collect();
        let b = phi.decode_latent(&p, &z2);
        for (x, y) in a.iter().zip(&b) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mean_is_deterministic_and_nonnegative() {
        let (phi, p, rope) = layer(4);
        let h = hidden(7, 4, 1.0);
        let packing = Packing::from_lens(&[4, 3]);
        let a = phi.forward(&p, h.clone(), &packing, &rope, PhiMode::EvalMean, None).unwrap();
        let b = phi.forward(&p, h.clone(), &packing, &rope, PhiMode::EvalMean, None).unwrap();
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.kl, b.kl);
        assert!(a.kl.iter().all(|&k| k >= 0.0));
        assert!(phi.forward(&p, h, &packing, &rope, PhiMode::Train, None).is_err());
    }
}
