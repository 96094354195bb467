//! Scalar abstraction for the two precision modes.
//!
//! Training runs in `f32`; oracle tests (finite-difference gradient checks,
//! dense propagation references) instantiate the same code with `f64` for
//! the extra headroom.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point scalar the engine is generic over.
pub trait Real:
    Float + Debug + Display + Default + Send + Sync + Sum + 'static
{
    /// Lossy conversion from `f64` (identity for `f64`).
    fn from_f64(value: f64) -> Self;
    /// Widening conversion to `f64` (identity for `f64`).
    fn as_f64(self) -> f64;
    /// Conversion from the checkpoint container's 32-bit storage format.
    fn from_f32(value: f32) -> Self;
    /// Conversion to the checkpoint container's 32-bit storage format.
    fn as_f32(self) -> f32;
}

impl Real for f32 {
    #[inline]
    fn from_f64(value: f64) -> Self {
        value as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(value: f32) -> Self {
        value
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(value: f32) -> Self {
        value as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
}
