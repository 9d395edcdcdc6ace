//! Floating point abstraction shared by the statistics, the mixture solver and
//! the streaming detector.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// floating point: f32 or f64
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_count(v: u64) -> Self {
        Self::from_u64(v).expect("count representable in scalar type")
    }

    fn from_size(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("size representable in scalar type")
    }

    /// Precision target for iterative special-function evaluation.
    fn series_eps() -> Self;
}

impl Scalar for f32 {
    fn series_eps() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn series_eps() -> Self {
        1e-16
    }
}
