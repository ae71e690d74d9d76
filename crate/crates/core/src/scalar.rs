//! Element type abstraction shared by every index.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point coordinate and score type: `f32` or `f64`.
///
/// All arithmetic in the crate is written against this trait. The on-disk
/// formats are single precision, so file readers produce `f32` stores that can
/// be widened with [`VectorStore::cast`](crate::VectorStore::cast).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + LinalgScalar + Debug + Display + Default + Send + Sync
{
    /// Lossy conversion used for configuration values (thresholds, noise scales).
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
