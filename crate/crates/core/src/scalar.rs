use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the geometry kernels are written against: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance used for orthonormality checks and near-zero guards.
    fn tolerance() -> Self;
}

impl Scalar for f32 {
    fn tolerance() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn tolerance() -> Self {
        1e-9
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle<T: Scalar>(angle: T) -> T {
    let two_pi = T::PI() + T::PI();
    let shifted = angle + T::PI();
    let mut wrapped = shifted - two_pi * (shifted / two_pi).floor();
    if wrapped >= two_pi {
        wrapped = wrapped - two_pi;
    }
    if wrapped < T::zero() {
        wrapped = T::zero();
    }
    wrapped - T::PI()
}

/// Absolute heading difference treating headings that differ by pi as equal.
pub fn yaw_error_mod_pi<T: Scalar>(a: T, b: T) -> T {
    let pi = T::PI();
    let d = (a - b).abs() % pi;
    d.min(pi - d)
}
