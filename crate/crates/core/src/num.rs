//! Scalar abstraction the numeric core is generic over.

use ndarray::ScalarOperand;
use num_traits::Float;

/// Floating-point scalar type for latents, attention, losses and metrics.
///
/// `f32` matches the on-disk latent format, `f64` is what the oracles and
/// gradient checks run at.
pub trait Scalar:
    Float + ScalarOperand + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn fl<F: Scalar>(x: f64) -> F {
    F::from(x).expect("f64 converts into every supported scalar")
}
