//! Scalar trait bound for tensor elements.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point element type a tensor may hold.
///
/// `f64` is the artifact default (64-bit everywhere); `f32` is supported for
/// callers that want the smaller footprint.
pub trait Scalar: Float + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static {
    fn from_float(x: f64) -> Self;

    fn into_float(self) -> f64;
}

impl Scalar for f32 {
    fn from_float(x: f64) -> Self {
        x as f32
    }

    fn into_float(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_float(x: f64) -> Self {
        x
    }

    fn into_float(self) -> f64 {
        self
    }
}
