//! Scalar abstraction: the solver core is generic over the floating-point type.
//!
//! `f32` and `f64` both satisfy [`Scalar`]; concrete aliases for the main domain
//! types live at the crate root. Literal constants are written in `f64` and
//! converted through [`Scalar::of`].

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar usable throughout the solver.
///
/// The `rustfft::FftNum` bound keeps the spectral Poisson solve generic over the
/// same type as everything else.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + Sum<Self>
    + rustfft::FftNum
    + Display
    + LowerExp
    + Debug
{
    /// Converts an `f64` literal into `Self` (lossy for `f32`).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal convertible to scalar")
    }

    /// Converts a count into `Self`.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize convertible to scalar")
    }

    /// Widens to `f64` for accumulation-insensitive reporting.
    fn widen(self) -> f64;
}

impl Scalar for f64 {
    fn widen(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn widen(self) -> f64 {
        f64::from(self)
    }
}

/// Dot product of two 3-vectors.
#[inline]
pub fn dot3<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Squared Euclidean norm of a 3-vector.
#[inline]
pub fn norm_sq3<T: Scalar>(a: [T; 3]) -> T {
    dot3(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion_roundtrips() {
        assert_eq!(f64::of(0.5), 0.5);
        assert_eq!(f32::of(0.5), 0.5_f32);
        assert_eq!(f64::of_usize(7), 7.0);
    }

    #[test]
    fn vector_helpers() {
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, -5.0, 6.0];
        assert_eq!(dot3(a, b), 12.0);
        assert_eq!(norm_sq3(a), 14.0);
    }
}
