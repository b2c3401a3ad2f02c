//! Scalar abstraction for the numeric kernels.
//!
//! Everything that is pure math (kernels, factorizations, hypervolume,
//! Frechet distances) is generic over [`Real`] so it runs identically on
//! `f32` and `f64`. The crate root exports `f64` aliases for the common
//! types; `f64` is what the optimizer itself uses.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

/// Shorthand for converting an `f64` constant into `T`.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 constant representable in scalar type")
}

/// Lossy view of a scalar as `f64`, used at boundaries that call into
/// double-precision special functions.
#[inline]
pub fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().expect("scalar convertible to f64")
}
