//! Dense helpers, seeded sampling and gradient verification.
//!
//! Matrices are `ndarray` arrays in row-major layout. Everything that runs
//! through the generator is generic over [`Real`] so the same code trains in
//! `f32` and is checked against finite differences in `f64`.

mod adam;
mod gradcheck;
mod ops;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::Float;

pub use adam::Adam;
pub use gradcheck::{differentiate, grad_check, Objective, ParamBlocks};
pub use ops::{count_ops, measure_ops};
pub use rng::{sample_gaussian, sample_gumbel, Rng, GUMBEL_CLAMP};

pub type Matrix<F> = Array2<F>;
pub type Vector<F> = Array1<F>;

/// Scalar type used throughout the generator graph.
pub trait Real:
    LinalgScalar
    + Float
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + Default
    + 'static
{
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn all_finite<F: Real>(values: impl IntoIterator<Item = F>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

/// Row-wise softmax in place.
pub fn softmax_rows<F: Real>(m: &mut Array2<F>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: F = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub fn cast_matrix<A: Real, B: Real>(m: &Array2<A>) -> Array2<B> {
    m.mapv(|v| B::of(v.as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for x in [-5.0f64, -0.3, 0.0, 0.7, 4.0] {
            assert!((softplus(x) - (1.0 + x.exp()).ln()).abs() < 1e-12);
        }
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(800.0f64).is_finite());
        assert!(softplus(-800.0f64) >= 0.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = ndarray::array![[1.0f64, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        softmax_rows(&mut m);
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((m[[1, 0]] - 0.5).abs() < 1e-12);
    }
}
