use core::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};

/// Element type of every tensor in the engine.
///
/// Optimization runs at `f32`, verification (finite-difference checks,
/// analytic-optimum probes) at `f64`; the two impls below are the only
/// ones intended.
pub trait Scalar:
    Float + NumAssign + LinalgScalar + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
