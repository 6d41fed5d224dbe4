//! Scalar abstraction: the numeric core is generic over the floating-point
//! type, with `f64` as the default used by the CLI.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rand::Rng;

/// Floating-point scalar used throughout the numeric core.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for tolerances and literal constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant")
    }

    fn half() -> Self {
        Self::of(0.5)
    }

    fn two() -> Self {
        Self::of(2.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A `Real` that can also be sampled from the standard rand distributions.
///
/// Kept separate from `Real` so the pure math stays free of rand bounds.
pub trait SampleReal: Real {
    /// Uniform draw from `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Poisson draw with the given mean (zero mean always yields zero).
    fn sample_poisson<R: Rng + ?Sized>(mean: Self, rng: &mut R) -> u64;
}

macro_rules! impl_sample_real {
    ($t:ty) => {
        impl SampleReal for $t {
            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random()
            }

            fn sample_poisson<R: Rng + ?Sized>(mean: Self, rng: &mut R) -> u64 {
                if mean <= 0.0 {
                    return 0;
                }
                let dist = rand_distr::Poisson::new(mean).expect("positive finite mean");
                rand::distr::Distribution::sample(&dist, rng) as u64
            }
        }
    };
}

impl_sample_real!(f32);
impl_sample_real!(f64);
