use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating point element type accepted by tensors, the audio front end and the model.
///
/// Implemented for `f32` (training and checkpoints) and `f64` (gradient checking,
/// reference computations).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + FftNum + Default + Debug + Display + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable, which
    /// cannot happen for the finite literals used in this crate.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
