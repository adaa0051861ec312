//! Floating-point abstraction shared by every numeric module.
//!
//! All algorithms in this crate are written against [`Scalar`] so the same
//! code runs in `f32` (cheap training and scoring) and `f64` (gradient checks,
//! statistics). The crate root exposes `f64` aliases for everyday use.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Sum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Values out of range saturate to infinity.
    fn lit(x: f64) -> Self;

    /// Widening conversion used for diagnostics and serialized summaries.
    fn as_f64(self) -> f64;

    fn count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Arithmetic mean; zero for an empty slice.
pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::count(xs.len())
}

/// Population variance around `mean`.
pub fn variance<T: Scalar>(xs: &[T], mean: T) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / T::count(xs.len())
}

/// Linear-interpolation quantile of already sorted data (the "type 7" rule:
/// position `p·(n−1)` between order statistics).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    if n == 1 {
        return sorted[0];
    }
    let p = p.max(T::zero()).min(T::one());
    let pos = p * T::count(n - 1);
    let lo = pos.floor();
    let lo_idx = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_idx = (lo_idx + 1).min(n - 1);
    let frac = pos - lo;
    sorted[lo_idx] + (sorted[hi_idx] - sorted[lo_idx]) * frac
}

/// Sorts a copy and takes the interpolated quantile.
pub fn quantile<T: Scalar>(xs: &[T], p: T) -> T {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("quantile of non-finite data"));
    quantile_sorted(&v, p)
}

pub fn median<T: Scalar>(xs: &[T]) -> T {
    quantile(xs, T::lit(0.5))
}
