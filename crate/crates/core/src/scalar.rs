//! Scalar abstraction for the numerical kernels.
//!
//! All core math is generic over [`Real`], implemented for `f32` and `f64`.
//! Persistence and the CLI pin `f64` (see the crate-root aliases).

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar used throughout the toolkit.
pub trait Real:
    nalgebra::RealField
    + Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` literals (tolerances, config values).
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 conversion")
    }

    fn to_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
