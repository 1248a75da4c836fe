//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating-point scalar the core math is written against (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Sum + Default + Debug + Display
{
    /// Converts an `f64` literal or configuration value into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 value representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// `10·log10(self)`, for power ratios.
    #[inline]
    fn to_db(self) -> Self {
        Self::lit(10.0) * self.log10()
    }

    /// Inverse of [`Real::to_db`].
    #[inline]
    fn from_db(db: Self) -> Self {
        Self::lit(10.0).powf(db / Self::lit(10.0))
    }

    /// Tolerant ordering for values known to be finite.
    #[inline]
    fn cmp_finite(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap_or(std::cmp::Ordering::Equal)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
