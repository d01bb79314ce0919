//! Scalar abstraction for the tensor algebra.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real floating-point scalar usable as a log-space tensor entry (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Smallest value of a log-space exp-space sum that is still trusted to full precision.
    fn underflow_guard() -> Self {
        Self::min_positive_value() / Self::epsilon()
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
}
