//! Scalar abstraction: the whole library is generic over the real floating
//! point type, with `f64` as the reference precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssign};
use rand::Rng;
use rand_distr::StandardNormal;

/// Real scalar type backing all complex arithmetic (`f32` or `f64`).
///
/// The default tolerances quoted throughout the crate assume `f64`;
/// `f32` works but with correspondingly looser accuracy.
pub trait Scalar:
    Float + FloatConst + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Draw from the standard normal distribution N(0, 1).
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from [0, 1).
    fn sample_uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion from `f64`, for constants and configuration values.
    fn from_f64(value: f64) -> Self {
        Self::from(value).expect("f64 constant representable in scalar type")
    }

    /// Unitarity validation tolerance scaled to the type's precision.
    fn unitarity_tolerance() -> Self;
}

impl Scalar for f64 {
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn sample_uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }

    fn unitarity_tolerance() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn sample_uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }

    fn unitarity_tolerance() -> Self {
        1e-4
    }
}
