//! Scalar abstraction shared by the encoder, attribution and scoring code.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the numeric core is generic over: `f32`, `f64` or
/// [`DoubleDouble`](crate::double_double::DoubleDouble).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Conversion from `f64` (rounding for `f32`); used for constants and
    /// weight loading.
    fn of(v: f64) -> Self;

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
}

impl Scalar for crate::double_double::DoubleDouble {
    fn of(v: f64) -> Self {
        v.into()
    }
}

/// Left-to-right sum; `std::iter::Sum` is not available for every scalar.
pub trait Total<T>: Iterator<Item = T> + Sized {
    fn total(self) -> T;
}

impl<T: Scalar, I: Iterator<Item = T>> Total<T> for I {
    fn total(self) -> T {
        self.fold(T::zero(), |acc, x| acc + x)
    }
}

/// Numerically stable softmax over a slice.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    if xs.is_empty() {
        return Vec::new();
    }
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total = exps.iter().copied().total();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0_f64, 2.0, 3.0]);
        let b = softmax(&[101.0_f64, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_handles_f32() {
        let w = softmax(&[0.0_f32, 0.0]);
        assert_eq!(w, vec![0.5, 0.5]);
    }
}
