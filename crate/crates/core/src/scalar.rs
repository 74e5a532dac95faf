//! Scalar abstraction so every numeric kernel runs in f32 or f64.
//!
//! The classical models and feature extraction default to f64; the network
//! trains in f32 and is gradient-checked in f64. Random draws are always
//! made in f64/usize space and cast afterwards, so both instantiations
//! consume identical RNG streams.

use std::fmt::Display;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rustfft::FftNum;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + NumAssign
    + FftNum
    + Sum<Self>
    + Display
    + Default
    + Serialize
    + DeserializeOwned
{
}

impl<T> Scalar for T where
    T: Float
        + NumAssign
        + FftNum
        + Sum<T>
        + Display
        + Default
        + Serialize
        + DeserializeOwned
{
}

/// Cast an f64 constant into the working scalar.
#[inline]
pub fn sc<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("constant not representable in scalar type")
}

/// Widen a scalar to f64 at reporting boundaries.
#[inline]
pub fn to64<S: Scalar>(v: S) -> f64 {
    v.to_f64().expect("scalar not convertible to f64")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_between_instantiations() {
        let x: f32 = sc(0.25);
        assert_eq!(x, 0.25f32);
        let y: f64 = sc(0.25);
        assert_eq!(to64(y), 0.25);
    }

    fn sum_generic<S: Scalar>(v: &[S]) -> S {
        v.iter().copied().sum()
    }

    #[test]
    fn generic_code_accepts_both_floats() {
        assert_eq!(sum_generic(&[1.0f32, 2.0]), 3.0);
        assert_eq!(sum_generic(&[1.0f64, 2.0]), 3.0);
    }
}
