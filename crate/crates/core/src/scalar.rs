//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type used for values, payments, probabilities and weights.
///
/// Implemented for `f64` (the default everywhere in the CLI) and `f32`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + for<'a> Sum<&'a Self>
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Absolute tolerance used by equality and inequality checkers.
    fn tolerance() -> Self;

    /// Converts an `f64` literal. Panics only for values the type cannot hold.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Euler's number.
    #[inline]
    fn e() -> Self {
        Self::one().exp()
    }

    /// `e / (e - 1)`, the correlation-gap bound for monotone DMR valuations.
    #[inline]
    fn dmr_gap() -> Self {
        let e = Self::e();
        e / (e - Self::one())
    }
}

impl Scalar for f64 {
    #[inline]
    fn tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    #[inline]
    fn tolerance() -> Self {
        1e-4
    }
}

/// `|a - b| <= tol`.
#[inline]
pub fn approx_eq<S: Scalar>(a: S, b: S, tol: S) -> bool {
    (a - b).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_constant() {
        assert!((f64::dmr_gap() - 1.581_976_706_869_326_4).abs() < 1e-15);
        assert!((f32::dmr_gap() - 1.581_976_7).abs() < 1e-6);
    }

    #[test]
    fn literal_roundtrip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::from_count(7), 7.0);
        assert_eq!(0.5f32.as_f64(), 0.5);
    }
}
