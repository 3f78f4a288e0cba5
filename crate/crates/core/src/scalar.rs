use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type accepted by the model and optimizer.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    /// Name stored in checkpoint headers.
    const DTYPE: &'static str;

    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}
