//! Scalar abstraction for the numeric core.
//!
//! Everything that does floating-point math (tensor ops, networks, training,
//! statistics) is generic over [`Real`], so the same code runs in `f32` for
//! training speed and in `f64` where precision matters (finite-difference
//! gradient checks, report aggregates). Concrete aliases live at the crate
//! root.

use ndarray::NdFloat;
use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the numeric core.
pub trait Real: NdFloat + Float + FromPrimitive + Default {
    const EPS_NORM: f64 = 1e-5;
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand conversion from `f64` literals into the generic scalar.
#[inline(always)]
pub fn r<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("finite literal")
}

/// Lossy view of a generic scalar as `f64` (exact for f32/f64).
#[inline(always)]
pub fn to_f64<R: Real>(x: R) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).expect("scalar convertible to f64")
}
