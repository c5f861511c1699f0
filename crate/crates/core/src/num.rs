//! Scalar abstraction for the whole crate.
//!
//! All numerics are generic over [`Real`], which any floating-point type
//! with the usual transcendental operations satisfies. `f64` is what the
//! CLI and the tests instantiate; `f32` works for quick sweeps where
//! solver tolerances are relaxed accordingly.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by every module in this crate.
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: RealField + FromPrimitive + ToPrimitive + Copy + Default + Send + Sync + 'static
{
}

/// Shorthand for pulling an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// `x` as `f64`, for reporting and hashing only (never feeds back into math).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}
