use crate::params::Slot;
use crate::tensor::{add_into, matmul, matmul_at, matmul_bt, Float};

/// Ragged batch layout: sequences stored back to back, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packing {
    offsets: Vec<usize>,
}

impl Packing {
    pub fn from_lens(lens: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lens.len() + 1);
        offsets.push(0);
        for &l in lens {
            offsets.push(offsets.last().unwrap() + l);
        }
        Packing { offsets }
    }

    pub fn single(len: usize) -> Self {
        Self::from_lens(&[len])
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `(start, len)` of every segment.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.windows(2).map(|w| (w[0], w[1] - w[0]))
    }

    pub fn max_len(&self) -> usize {
        self.segments().map(|(_, l)| l).max().unwrap_or(0)
    }
}

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Slot,
    pub b: Option<Slot>,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.w.rows
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols
    }

    pub fn forward<T: Float>(&self, p: &[T], x: &[T], n: usize) -> Vec<T> {
        let (i, o) = (self.in_dim(), self.out_dim());
        let mut y = vec![T::ZERO; n * o];
        matmul(&mut y, x, self.w.of(p), n, i, o, false);
        if let Some(b) = self.b {
            let b = b.of(p);
            for row in y.chunks_exact_mut(o) {
                add_into(row, b);
            }
        }
        y
    }

    /// Accumulates parameter gradients into `g`.
    pub fn backward_params<T: Float>(&self, g: &mut [T], x: &[T], dy: &[T], n: usize) {
        let (i, o) = (self.in_dim(), self.out_dim());
        matmul_at(self.w.of_mut(g), x, dy, i, n, o, true);
        if let Some(b) = self.b {
            let db = b.of_mut(g);
            for row in dy.chunks_exact(o) {
                add_into(db, row);
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Float>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T], n: usize) -> Vec<T> {
        self.backward_params(g, x, dy, n);
        let (i, o) = (self.in_dim(), self.out_dim());
        let mut dx = vec![T::ZERO; n * i];
        matmul_bt(&mut dx, dy, self.w.of(p), n, o, i, false);
        dx
    }
}

pub const RMS_EPS: f64 = 1e-5;

/// Root-mean-square normalisation with a learned gain.
#[derive(Debug, Clone, Copy)]
pub struct RmsNorm {
    pub g: Slot,
}

impl RmsNorm {
    pub fn dim(&self) -> usize {
        self.g.cols
    }

    /// Returns the normalised rows and the per-row inverse RMS.
    pub fn forward<T: Float>(&self, p: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        let g = self.g.of(p);
        let eps = T::from_f64(RMS_EPS);
        let dn = T::from_f64(d as f64);
        let mut y = vec![T::ZERO; x.len()];
        let mut inv = Vec::with_capacity(x.len() / d);
        for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
            let ms = xr.iter().map(|&v| v * v).sum::<T>() / dn;
            let r = T::ONE / (ms + eps).sqrt();
            for ((yv, &xv), &gv) in yr.iter_mut().zip(xr).zip(g) {
                *yv = xv * r * gv;
            }
            inv.push(r);
        }
        (y, inv)
    }

    pub fn backward<T: Float>(&self, p: &[T], grads: &mut [T], x: &[T], inv: &[T], dy: &[T]) -> Vec<T> {
        let d = self.dim();
        let g = self.g.of(p);
        let dn = T::from_f64(d as f64);
        let mut dx = vec![T::ZERO; x.len()];
        let dg = self.g.of_mut(grads);
        for (((xr, dyr), dxr), &r) in x
            .chunks_exact(d)
            .zip(dy.chunks_exact(d))
            .zip(dx.chunks_exact_mut(d))
            .zip(inv)
        {
            let mut dot = T::ZERO;
            for j in 0..d {
                let dxhat = dyr[j] * g[j];
                dot += dxhat * xr[j];
                dg[j] += dyr[j] * xr[j] * r;
            }
            let coef = r * r * r * dot / dn;
            for j in 0..d {
                dxr[j] = r * dyr[j] * g[j] - coef * xr[j];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: Slot,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.table.cols
    }

    pub fn forward<T: Float>(&self, p: &[T], tokens: &[u32]) -> Vec<T> {
        let d = self.dim();
        let table = self.table.of(p);
        let mut out = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            let t = t as usize;
            out.extend_from_slice(&table[t * d..(t + 1) * d]);
        }
        out
    }

    pub fn backward<T: Float>(&self, grads: &mut [T], tokens: &[u32], dy: &[T]) {
        let d = self.dim();
        let table = self.table.of_mut(grads);
        for (&t, row) in tokens.iter().zip(dy.chunks_exact(d)) {
            let t = t as usize;
            add_into(&mut table[t * d..(t + 1) * d], row);
        }
    }
}

/// Rotary position tables. Dimension `i` of a head is paired with
/// `i + head_dim / 2` and rotated by `pos * base^(-2i / head_dim)`.
#[derive(Debug, Clone)]
pub struct Rope<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Float> Rope<T> {
    pub fn new(max_len: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(max_len * half);
        let mut sin = Vec::with_capacity(max_len * half);
        for pos in 0..max_len {
            for i in 0..half {
                let freq = base.powf(-2.0 * i as f64 / head_dim as f64);
                let a = pos as f64 * freq;
                cos.push(T::from_f64(a.cos()));
                sin.push(T::from_f64(a.sin()));
            }
        }
        Rope { half, cos, sin }
    }

    pub fn max_len(&self) -> usize {
        if self.half == 0 {
            usize::MAX
        } else {
            self.cos.len() / self.half
        }
    }

    /// Rotates the `cols`-wide block starting at column `col0` of every row
    /// (row stride `stride`) in place, treating it as `heads` heads. `inverse`
    /// applies the transpose rotation, which is the backward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(&self, buf: &mut [T], packing: &Packing, stride: usize, col0: usize, heads: usize, inverse: bool) {
        let half = self.half;
        let hd = 2 * half;
        for (start, len) in packing.segments() {
            for pos in 0..len {
                let row = &mut buf[(start + pos) * stride + col0..][..heads * hd];
                let cs = &self.cos[pos * half..(pos + 1) * half];
                let sn = &self.sin[pos * half..(pos + 1) * half];
                for h in 0..heads {
                    let head = &mut row[h * hd..(h + 1) * hd];
                    for i in 0..half {
                        let (x1, x2) = (head[i], head[i + half]);
                        let s = if inverse { -sn[i] } else { sn[i] };
                        head[i] = x1 * cs[i] - x2 * s;
                        head[i + half] = x1 * s + x2 * cs[i];
                    }
                }
            }
        }
    }
}

#[inline]
pub fn silu<T: Float>(x: T) -> T {
    x * crate::tensor::sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Float>(x: T) -> T {
    let s = crate::tensor::sigmoid(x);
    s * (T::ONE + x * (T::ONE - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rope_inverse_undoes_forward() {
        let rope = Rope::<f64>::new(8, 4, 10000.0);
        let packing = Packing::from_lens(&[5, 3]);
        let orig: Vec<f64> = (0..8 * 8).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut buf = orig.clone();
        rope.apply(&mut buf, &packing, 8, 0, 2, false);
        assert_ne!(buf, orig);
        rope.apply(&mut buf, &packing, 8, 0, 2, true);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let rope = Rope::<f64>::new(4, 4, 10000.0);
        let mut buf = vec![1.0, 2.0, 3.0, 4.0];
        rope.apply(&mut buf, &Packing::single(1), 4, 0, 1, false);
        assert_eq!(buf, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn packing_segments() {
        let p = Packing::from_lens(&[3, 0, 2]);
        assert_eq!(p.segments().collect::<Vec<_>>(), vec![(0, 3), (3, 0), (3, 2)]);
        assert_eq!(p.total(), 5);
        assert_eq!(p.max_len(), 3);
    }
}
