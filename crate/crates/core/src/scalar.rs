use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::Num;

/// Number type the closed-form models are evaluated in.
///
/// Implemented for `f32`, `f64` and exact rationals; every quantity the
/// models produce is a ratio of integer symbol counts, so the rational
/// instances are exact.
pub trait Scalar: Num + Clone + PartialOrd + Debug {
    fn from_u64(n: u64) -> Self;
    fn to_f64(&self) -> f64;

    fn ratio(num: u64, den: u64) -> Self {
        Self::from_u64(num) / Self::from_u64(den)
    }
}

impl Scalar for f32 {
    fn from_u64(n: u64) -> Self {
        n as f32
    }

    fn to_f64(&self) -> f64 {
        *self as f64
    }
}

impl Scalar for f64 {
    fn from_u64(n: u64) -> Self {
        n as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for Ratio<i64> {
    fn from_u64(n: u64) -> Self {
        Ratio::from_integer(n as i64)
    }

    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

impl Scalar for Ratio<i128> {
    fn from_u64(n: u64) -> Self {
        Ratio::from_integer(n as i128)
    }

    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}
