//! Pre-norm decoder block: causal multi-head attention with rotary
//! positions, then a gated (SwiGLU) feed-forward, each on a residual branch.

use super::layers::{silu, silu_grad, Linear, Packing, RmsNorm, Rope};
use crate::params::{Group, Init, ParamLayout};
use crate::tensor::{softmax_in_place, Float};

#[derive(Debug, Clone, Copy)]
pub struct BlockSlots {
    pub attn_norm: RmsNorm,
    /// Fused query/key/value projection, `d x 3d`.
    pub wqkv: Linear,
    pub wo: Linear,
    pub mlp_norm: RmsNorm,
    /// Fused gate/up projection, `d x 2f`.
    pub w13: Linear,
    pub w2: Linear,
    pub heads: usize,
}

impl BlockSlots {
    pub fn register(
        layout: &mut ParamLayout,
        prefix: &str,
        group: Group,
        dim: usize,
        mlp_dim: usize,
        heads: usize,
        std: f64,
        resid_std: f64,
    ) -> Self {
        let norm = |name: &str, layout: &mut ParamLayout| RmsNorm {
            g: layout.push(format!("{prefix}.{name}"), 1, dim, group, Init::Const(1.0)),
        };
        let attn_norm = norm("attn_norm", layout);
        let wqkv = Linear {
            w: layout.push(format!("{prefix}.attn.wqkv"), dim, 3 * dim, group, Init::Normal(std)),
            b: None,
        };
        let wo = Linear {
            w: layout.push(format!("{prefix}.attn.wo"), dim, dim, group, Init::Normal(resid_std)),
            b: None,
        };
        let mlp_norm = norm("mlp_norm", layout);
        let w13 = Linear {
            w: layout.push(format!("{prefix}.mlp.w13"), dim, 2 * mlp_dim, group, Init::Normal(std)),
            b: None,
        };
        let w2 = Linear {
            w: layout.push(format!("{prefix}.mlp.w2"), mlp_dim, dim, group, Init::Normal(resid_std)),
            b: None,
        };
        BlockSlots {
            attn_norm,
            wqkv,
            wo,
            mlp_norm,
            w13,
            w2,
            heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.wo.out_dim()
    }

    pub fn mlp_dim(&self) -> usize {
        self.w2.in_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    x: Vec<T>,
    a: Vec<T>,
    inv1: Vec<T>,
    /// q, k, v after rotation, `n x 3d`.
    qkv: Vec<T>,
    /// Row log-sum-exp of the attention scores, `n x heads`.
    lse: Vec<T>,
    o: Vec<T>,
    x1: Vec<T>,
    b: Vec<T>,
    inv2: Vec<T>,
    h13: Vec<T>,
    s: Vec<T>,
}

pub fn block_forward<T: Float>(
    blk: &BlockSlots,
    p: &[T],
    x: Vec<T>,
    packing: &Packing,
    rope: &Rope<T>,
) -> (Vec<T>, BlockCache<T>) {
    let n = packing.total();
    let d = blk.dim();
    let f = blk.mlp_dim();

    let (a, inv1) = blk.attn_norm.forward(p, &x);
    let mut qkv = blk.wqkv.forward(p, &a, n);
    rope.apply(&mut qkv, packing, 3 * d, 0, blk.heads, false);
    rope.apply(&mut qkv, packing, 3 * d, d, blk.heads, false);
    let (o, lse) = attention_forward(&qkv, packing, d, blk.heads);
    let mut x1 = blk.wo.forward(p, &o, n);
    for (y, &r) in x1.iter_mut().zip(&x) {
        *y += r;
    }

    let (b, inv2) = blk.mlp_norm.forward(p, &x1);
    let h13 = blk.w13.forward(p, &b, n);
    let mut s = vec![T::ZERO; n * f];
    for (srow, hrow) in s.chunks_exact_mut(f).zip(h13.chunks_exact(2 * f)) {
        let (u, g) = hrow.split_at(f);
        for j in 0..f {
            srow[j] = silu(u[j]) * g[j];
        }
    }
    let mut y = blk.w2.forward(p, &s, n);
    for (v, &r) in y.iter_mut().zip(&x1) {
        *v += r;
    }
    let cache = BlockCache {
        x,
        a,
        inv1,
        qkv,
        lse,
        o,
        x1,
        b,
        inv2,
        h13,
        s,
    };
    (y, cache)
}

pub fn block_backward<T: Float>(
    blk: &BlockSlots,
    p: &[T],
    grads: &mut [T],
    cache: &BlockCache<T>,
    dy: &[T],
    packing: &Packing,
    rope: &Rope<T>,
) -> Vec<T> {
    let n = packing.total();
    let d = blk.dim();
    let f = blk.mlp_dim();

    let ds = blk.w2.backward(p, grads, &cache.s, dy, n);
    let mut dh13 = vec![T::ZERO; n * 2 * f];
    for ((drow, hrow), dsrow) in dh13.chunks_exact_mut(2 * f).zip(cache.h13.chunks_exact(2 * f)).zip(ds.chunks_exact(f)) {
        let (u, g) = hrow.split_at(f);
        let (du, dg) = drow.split_at_mut(f);
        for j in 0..f {
            du[j] = dsrow[j] * g[j] * silu_grad(u[j]);
            dg[j] = dsrow[j] * silu(u[j]);
        }
    }
    let db = blk.w13.backward(p, grads, &cache.b, &dh13, n);
    let mut dx1 = blk.mlp_norm.backward(p, grads, &cache.x1, &cache.inv2, &db);
    for (v, &r) in dx1.iter_mut().zip(dy) {
        *v += r;
    }

    let d_o = blk.wo.backward(p, grads, &cache.o, &dx1, n);
    let mut dqkv = attention_backward(&cache.qkv, &cache.lse, &d_o, packing, d, blk.heads);
    rope.apply(&mut dqkv, packing, 3 * d, 0, blk.heads, true);
    rope.apply(&mut dqkv, packing, 3 * d, d, blk.heads, true);
    let da = blk.wqkv.backward(p, grads, &cache.a, &dqkv, n);
    let mut dx = blk.attn_norm.backward(p, grads, &cache.x, &cache.inv1, &da);
    for (v, &r) in dx.iter_mut().zip(&dx1) {
        *v += r;
    }
    dx
}

/// Masked, scaled scores `S = Q K^T / sqrt(hd)` for one head of one segment.
fn scores<T: Float>(qkv: &[T], start: usize, len: usize, d: usize, h: usize, hd: usize, out: &mut [T]) {
    let stride = 3 * d;
    let q = &qkv[start * stride + h * hd..];
    let k = &qkv[start * stride + d + h * hd..];
    let scale = T::ONE / T::from_f64(hd as f64).sqrt();
    T::gemm(len, hd, len, scale, q, stride as isize, 1, k, 1, stride as isize, T::ZERO, out, len as isize, 1);
}

fn attention_forward<T: Float>(qkv: &[T], packing: &Packing, d: usize, heads: usize) -> (Vec<T>, Vec<T>) {
    let n = packing.total();
    let hd = d / heads;
    let stride = 3 * d;
    let mut o = vec![T::ZERO; n * d];
    let mut lse = vec![T::ZERO; n * heads];
    let mut buf = vec![T::ZERO; packing.max_len().pow(2)];
    for (start, len) in packing.segments() {
        if len == 0 {
            continue;
        }
        let s = &mut buf[..len * len];
        for h in 0..heads {
            scores(qkv, start, len, d, h, hd, s);
            for i in 0..len {
                let row = &mut s[i * len..(i + 1) * len];
                let (live, masked) = row.split_at_mut(i + 1);
                let m = live.iter().copied().fold(live[0], T::max);
                let sum: T = live.iter().map(|&v| (v - m).exp()).sum();
                lse[(start + i) * heads + h] = m + sum.ln();
                softmax_in_place(live);
                masked.iter_mut().for_each(|v| *v = T::ZERO);
            }
            let v = &qkv[start * stride + 2 * d + h * hd..];
            let out = &mut o[start * d + h * hd..];
            T::gemm(len, len, hd, T::ONE, s, len as isize, 1, v, stride as isize, 1, T::ZERO, out, d as isize, 1);
        }
    }
    (o, lse)
}

fn attention_backward<T: Float>(qkv: &[T], lse: &[T], d_o: &[T], packing: &Packing, d: usize, heads: usize) -> Vec<T> {
    let n = packing.total();
    let hd = d / heads;
    let stride = 3 * d;
    let scale = T::ONE / T::from_f64(hd as f64).sqrt();
    let mut dqkv = vec![T::ZERO; n * stride];
    let maxl = packing.max_len();
    let mut pbuf = vec![T::ZERO; maxl * maxl];
    let mut dpbuf = vec![T::ZERO; maxl * maxl];
    for (start, len) in packing.segments() {
        if len == 0 {
            continue;
        }
        let pm = &mut pbuf[..len * len];
        let dp = &mut dpbuf[..len * len];
        for h in 0..heads {
            scores(qkv, start, len, d, h, hd, pm);
            for i in 0..len {
                let l = lse[(start + i) * heads + h];
                let row = &mut pm[i * len..(i + 1) * len];
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if j <= i { (*v - l).exp() } else { T::ZERO };
                }
            }
            let q = &qkv[start * stride + h * hd..];
            let k = &qkv[start * stride + d + h * hd..];
            let v = &qkv[start * stride + 2 * d + h * hd..];
            let dout = &d_o[start * d + h * hd..];

            // dV = P^T dO
            let dv = &mut dqkv[start * stride + 2 * d + h * hd..];
            T::gemm(len, len, hd, T::ONE, pm, 1, len as isize, dout, d as isize, 1, T::ZERO, dv, stride as isize, 1);
            // dP = dO V^T
            T::gemm(len, hd, len, T::ONE, dout, d as isize, 1, v, 1, stride as isize, T::ZERO, dp, len as isize, 1);
            // dS = P * (dP - rowsum(P * dP)) * scale
            for i in 0..len {
                let prow = &pm[i * len..(i + 1) * len];
                let dprow = &mut dp[i * len..(i + 1) * len];
                let dot: T = prow[..=i].iter().zip(&dprow[..=i]).map(|(&a, &b)| a * b).sum();
                for j in 0..len {
                    dprow[j] = if j <= i { prow[j] * (dprow[j] - dot) * scale } else { T::ZERO };
                }
            }
            // dQ = dS K ; dK = dS^T Q
            let dq = &mut dqkv[start * stride + h * hd..];
            T::gemm(len, len, hd, T::ONE, dp, len as isize, 1, k, stride as isize, 1, T::ZERO, dq, stride as isize, 1);
            let dk = &mut dqkv[start * stride + d + h * hd..];
            T::gemm(len, len, hd, T::ONE, dp, 1, len as isize, q, stride as isize, 1, T::ZERO, dk, stride as isize, 1);
        }
    }
    dqkv
}

/// Attention probabilities of one head for one packed segment, `len x len`,
/// row `i` holding the weights query `i` puts on keys `0..=i`.
pub fn attention_probs<T: Float>(
    blk: &BlockSlots,
    p: &[T],
    x: &[T],
    len: usize,
    head: usize,
    rope: &Rope<T>,
) -> Vec<T> {
    let d = blk.dim();
    let packing = Packing::single(len);
    let (a, _) = blk.attn_norm.forward(p, x);
    let mut qkv = blk.wqkv.forward(p, &a, len);
    rope.apply(&mut qkv, &packing, 3 * d, 0, blk.heads, false);
    rope.apply(&mut qkv, &packing, 3 * d, d, blk.heads, false);
    let mut s = vec![T::ZERO; len * len];
    scores(&qkv, 0, len, d, head, blk.head_dim(), &mut s);
    for i in 0..len {
        let row = &mut s[i * len..(i + 1) * len];
        let (live, masked) = row.split_at_mut(i + 1);
        softmax_in_place(live);
        masked.iter_mut().for_each(|v| *v = T::ZERO);
    }
    s
}
