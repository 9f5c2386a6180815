//! Scalar abstractions shared by the engines.
//!
//! The numerical engines are generic over [`Real`] (implemented for `f32` and
//! `f64`); the toric engine is generic over [`ExactField`] (arbitrary-precision
//! rationals, or fixed-width rationals for small corpora).

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::float::FloatConst;
use num_traits::{Float, FromPrimitive, Signed};

/// Floating point scalar for grid computations: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + rustfft::FftNum
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or parameter.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Exact ordered field used for divisor coefficients and thresholds.
pub trait ExactField: Clone + Ord + Signed + Debug + Display + FromStr + Send + Sync + 'static {
    fn from_int(value: i64) -> Self;

    fn from_frac(numer: i64, denom: i64) -> Self {
        Self::from_int(numer) / Self::from_int(denom)
    }

    /// Nearest `f64`, for reporting only.
    fn approx_f64(&self) -> f64;
}

impl ExactField for BigRational {
    fn from_int(value: i64) -> Self {
        Ratio::from_integer(BigInt::from(value))
    }

    fn approx_f64(&self) -> f64 {
        num_traits::ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl ExactField for Ratio<i64> {
    fn from_int(value: i64) -> Self {
        Ratio::from_integer(value)
    }

    fn approx_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

impl ExactField for Ratio<i128> {
    fn from_int(value: i64) -> Self {
        Ratio::from_integer(value as i128)
    }

    fn approx_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}
