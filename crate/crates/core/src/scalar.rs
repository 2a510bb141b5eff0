//! Scalar element trait shared by every kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point element type a tensor can hold: `f32` or `f64`.
///
/// Oracles convert through `f64` for accumulation, so every `Real` must
/// round-trip losslessly into `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Width in bytes of one element.
    const BYTES: usize;

    /// Accumulator for long dot products: `f64` for both widths, so `f32`
    /// kernels keep their error near one final rounding.
    type Acc: Real;

    fn widen(self) -> Self::Acc;

    fn narrow(acc: Self::Acc) -> Self;

    fn from_f64_lossy(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const BYTES: usize = 4;
    type Acc = f64;

    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn narrow(acc: f64) -> Self {
        acc as f32
    }

    #[inline(always)]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const BYTES: usize = 8;
    type Acc = f64;

    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }

    #[inline(always)]
    fn narrow(acc: f64) -> Self {
        acc
    }

    #[inline(always)]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}
