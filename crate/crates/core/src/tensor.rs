//! Dense row-major kernels shared by the model and the PHi layer.
//!
//! Everything here is generic over [`Float`] so the same code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Float:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn is_finite(self) -> bool;

    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_float {
    ($t:ty, $gemm:path) => {
        impl Float for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn ln_1p(self) -> Self {
                <$t>::ln_1p(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                debug_assert!(span(m, k, rsa, csa) <= a.len());
                debug_assert!(span(k, n, rsb, csb) <= b.len());
                debug_assert!(span(m, n, rsc, csc) <= c.len());
                // SAFETY: the debug assertions above document the bounds every
                // caller in this crate upholds; strides are non-negative.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm);
impl_float!(f64, matrixmultiply::dgemm);

#[allow(dead_code)]
fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

/// `out (m x n) [+]= a (m x k) * b (k x n)` for contiguous row-major slices.
pub fn matmul<T: Float>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, acc: bool) {
    let beta = if acc { T::ONE } else { T::ZERO };
    T::gemm(m, k, n, T::ONE, a, k as isize, 1, b, n as isize, 1, beta, out, n as isize, 1);
}

/// `out (m x n) [+]= a (m x k) * b^T` where `b` is stored `n x k`.
pub fn matmul_bt<T: Float>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, acc: bool) {
    let beta = if acc { T::ONE } else { T::ZERO };
    T::gemm(m, k, n, T::ONE, a, k as isize, 1, b, 1, k as isize, beta, out, n as isize, 1);
}

/// `out (m x n) [+]= a^T * b` where `a` is stored `k x m` and `b` is `k x n`.
pub fn matmul_at<T: Float>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, acc: bool) {
    let beta = if acc { T::ONE } else { T::ZERO };
    T::gemm(m, k, n, T::ONE, a, 1, m as isize, b, n as isize, 1, beta, out, n as isize, 1);
}

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

#[inline]
pub fn softplus<T: Float>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log(1 + e^-|x|)
    x.max(T::ZERO) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable log-sum-exp of a row.
pub fn log_sum_exp<T: Float>(row: &[T]) -> T {
    let m = row.iter().copied().fold(row[0], T::max);
    let s: T = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// In-place softmax of a row.
pub fn softmax_in_place<T: Float>(row: &mut [T]) {
    let m = row.iter().copied().fold(row[0], T::max);
    let mut s = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    let inv = T::ONE / s;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn add_into<T: Float>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn cast_vec<A: Float, B: Float>(v: &[A]) -> Vec<B> {
    v.iter().map(|&x| B::from_f64(x.to_f64())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5 - 2.0).collect(); // 3x4
        let mut c = vec![0.0; 8];
        matmul(&mut c, &a, &b, 2, 3, 4, false);
        let mut naive = vec![0.0; 8];
        for i in 0..2 {
            for j in 0..4 {
                for l in 0..3 {
                    naive[i * 4 + j] += a[i * 3 + l] * b[l * 4 + j];
                }
            }
        }
        assert_eq!(c, naive);

        let mut bt = vec![0.0; 12];
        for l in 0..3 {
            for j in 0..4 {
                bt[j * 3 + l] = b[l * 4 + j];
            }
        }
        let mut c2 = vec![0.0; 8];
        matmul_bt(&mut c2, &a, &bt, 2, 3, 4, false);
        assert_eq!(c2, naive);

        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for l in 0..3 {
                at[l * 2 + i] = a[i * 3 + l];
            }
        }
        let mut c3 = vec![1.0; 8];
        matmul_at(&mut c3, &at, &b, 2, 3, 4, true);
        for (x, y) in c3.iter().zip(&naive) {
            assert_eq!(*x, y + 1.0);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
