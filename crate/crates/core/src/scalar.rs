//! Scalar abstraction shared by tensors, networks and the statistical models.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the simulator can run on: `f32` or `f64`.
///
/// Metrics (RMSE, variances, accuracies) are always reported as `f64`
/// regardless of the scalar the network runs in; quantization is computed in
/// `f64` as well so that word values do not depend on the chosen scalar.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, rounding to nearest.
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Little-endian IEEE-754 bytes of the value narrowed to `f32`.
    fn to_f32_le(self) -> [u8; 4] {
        (self.as_f64() as f32).to_le_bytes()
    }
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
