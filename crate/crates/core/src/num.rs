//! Scalar abstraction shared by the electrical model, the measurement chain
//! and the diagnostics kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the numeric kernels are generic over.
///
/// Implemented for `f32` and `f64`. Long simulations should use `f64`: a
/// single 0.1 s step at C/3 moves SOC by about 1e-7, below the `f32`
/// resolution near 1.0.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal or configuration value.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Linear interpolation of `y` at `x` between `(x0, y0)` and `(x1, y1)`.
#[inline]
pub(crate) fn lerp<T: Scalar>(x0: T, y0: T, x1: T, y1: T, x: T) -> T {
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Index of the left end of the bracketing interval of `x` in the strictly
/// increasing `knots` (clamped to `0..knots.len() - 1`).
pub(crate) fn bracket<T: Scalar>(knots: &[T], x: T) -> usize {
    debug_assert!(knots.len() >= 2);
    let upper = knots.partition_point(|k| *k <= x);
    upper.saturating_sub(1).min(knots.len() - 2)
}
