//! Scalar abstraction for the linear-algebra layer.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the operator layer: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::Debug {
    /// Unit roundoff of the type.
    fn unit_roundoff() -> Self;
}

impl Real for f32 {
    fn unit_roundoff() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn unit_roundoff() -> Self {
        f64::EPSILON
    }
}

/// Lossless-enough conversion of an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
