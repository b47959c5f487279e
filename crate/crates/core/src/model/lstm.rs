//! LSTM layer with gates ordered `[input, forget, cell, output]`.

use super::layers::Packing;
use crate::params::{Group, Init, ParamLayout, Slot};
use crate::tensor::{add_into, matmul, matmul_at, matmul_bt, sigmoid, Float};

#[derive(Debug, Clone, Copy)]
pub struct LstmSlots {
    /// `in x 4d`
    pub wx: Slot,
    /// `d x 4d`
    pub wh: Slot,
    /// `1 x 4d`
    pub b: Slot,
}

impl LstmSlots {
    pub fn register(layout: &mut ParamLayout, prefix: &str, group: Group, in_dim: usize, dim: usize, std: f64) -> Self {
        let wx = layout.push(format!("{prefix}.wx"), in_dim, 4 * dim, group, Init::Normal(std));
        let wh = layout.push(format!("{prefix}.wh"), dim, 4 * dim, group, Init::Normal(std));
        // forget gate starts open
        let mut bias = vec![0.0; 4 * dim];
        bias[dim..2 * dim].iter_mut().for_each(|v| *v = 1.0);
        let b = layout.push(format!("{prefix}.b"), 1, 4 * dim, group, Init::Values(bias));
        LstmSlots { wx, wh, b }
    }

    pub fn dim(&self) -> usize {
        self.wh.rows
    }

    pub fn in_dim(&self) -> usize {
        self.wx.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Float> LstmState<T> {
    pub fn zeros(dim: usize) -> Self {
        LstmState {
            h: vec![T::ZERO; dim],
            c: vec![T::ZERO; dim],
        }
    }
}

/// Applies gate non-linearities in place and returns the new state.
fn cell<T: Float>(pre: &mut [T], c_prev: &[T], d: usize) -> LstmState<T> {
    let mut c = vec![T::ZERO; d];
    let mut h = vec![T::ZERO; d];
    for j in 0..d {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[d + j]);
        let g = pre[2 * d + j].tanh();
        let o = sigmoid(pre[3 * d + j]);
        pre[j] = i;
        pre[d + j] = f;
        pre[2 * d + j] = g;
        pre[3 * d + j] = o;
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    LstmState { h, c }
}

/// One recurrence step: `pre = x Wx + b + h Wh`, then the usual gates.
pub fn lstm_step<T: Float>(slots: &LstmSlots, p: &[T], state: &LstmState<T>, x: &[T]) -> (LstmState<T>, Vec<T>) {
    let d = slots.dim();
    let mut pre = vec![T::ZERO; 4 * d];
    matmul(&mut pre, x, slots.wx.of(p), 1, slots.in_dim(), 4 * d, false);
    add_into(&mut pre, slots.b.of(p));
    matmul(&mut pre, &state.h, slots.wh.of(p), 1, d, 4 * d, true);
    let next = cell(&mut pre, &state.c, d);
    let out = next.h.clone();
    (next, out)
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    x: Vec<T>,
    /// Post-activation gates, `n x 4d`.
    gates: Vec<T>,
    c: Vec<T>,
    h: Vec<T>,
}

/// Runs the layer over every packed segment from a zero state.
pub fn lstm_forward<T: Float>(slots: &LstmSlots, p: &[T], x: Vec<T>, packing: &Packing) -> (Vec<T>, LstmCache<T>) {
    let n = packing.total();
    let d = slots.dim();
    let mut gates = vec![T::ZERO; n * 4 * d];
    matmul(&mut gates, &x, slots.wx.of(p), n, slots.in_dim(), 4 * d, false);
    let b = slots.b.of(p);
    for row in gates.chunks_exact_mut(4 * d) {
        add_into(row, b);
    }
    let mut c = vec![T::ZERO; n * d];
    let mut h = vec![T::ZERO; n * d];
    let wh = slots.wh.of(p);
    for (start, len) in packing.segments() {
        let mut state = LstmState::zeros(d);
        for t in start..start + len {
            let pre = &mut gates[t * 4 * d..(t + 1) * 4 * d];
            matmul(pre, &state.h, wh, 1, d, 4 * d, true);
            state = cell(pre, &state.c, d);
            c[t * d..(t + 1) * d].copy_from_slice(&state.c);
            h[t * d..(t + 1) * d].copy_from_slice(&state.h);
        }
    }
    (h.clone(), LstmCache { x, gates, c, h })
}

pub fn lstm_backward<T: Float>(
    slots: &LstmSlots,
    p: &[T],
    grads: &mut [T],
    cache: &LstmCache<T>,
    dy: &[T],
    packing: &Packing,
) -> Vec<T> {
    let n = packing.total();
    let d = slots.dim();
    let wh = slots.wh.of(p);
    let mut dpre = vec![T::ZERO; n * 4 * d];
    let mut h_prev = vec![T::ZERO; n * d];
    for (start, len) in packing.segments() {
        let mut dh_next = vec![T::ZERO; d];
        let mut dc_next = vec![T::ZERO; d];
        for t in (start..start + len).rev() {
            let g = &cache.gates[t * 4 * d..(t + 1) * 4 * d];
            let c = &cache.c[t * d..(t + 1) * d];
            let dp = &mut dpre[t * 4 * d..(t + 1) * 4 * d];
            for j in 0..d {
                let (ig, fg, gg, og) = (g[j], g[d + j], g[2 * d + j], g[3 * d + j]);
                let c_prev = if t > start { cache.c[(t - 1) * d + j] } else { T::ZERO };
                let tc = c[j].tanh();
                let dh = dy[t * d + j] + dh_next[j];
                let dc = dc_next[j] + dh * og * (T::ONE - tc * tc);
                dp[j] = dc * gg * ig * (T::ONE - ig);
                dp[d + j] = dc * c_prev * fg * (T::ONE - fg);
                dp[2 * d + j] = dc * ig * (T::ONE - gg * gg);
                dp[3 * d + j] = dh * tc * og * (T::ONE - og);
                dc_next[j] = dc * fg;
            }
            matmul_bt(&mut dh_next, dp, wh, 1, 4 * d, d, false);
            if t > start {
                h_prev[t * d..(t + 1) * d].copy_from_slice(&cache.h[(t - 1) * d..t * d]);
            }
        }
    }
    matmul_at(slots.wh.of_mut(grads), &h_prev, &dpre, d, n, 4 * d, true);
    matmul_at(slots.wx.of_mut(grads), &cache.x, &dpre, slots.in_dim(), n, 4 * d, true);
    let db = slots.b.of_mut(grads);
    for row in dpre.chunks_exact(4 * d) {
        add_into(db, row);
    }
    let mut dx = vec![T::ZERO; n * slots.in_dim()];
    matmul_bt(&mut dx, &dpre, slots.wx.of(p), n, 4 * d, slots.in_dim(), false);
    dx
}
