//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
pub use twofloat::TwoFloat;

/// Floating-point scalar the embedding math is written against: `f32`, `f64`,
/// or the double-double [`TwoFloat`] used as a high-precision reference.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Conversion from an `f64` literal or file value, rounding for `f32`.
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
}

// `FromPrimitive::from_f64` on `TwoFloat` truncates through an integer
impl Scalar for TwoFloat {
    fn of(v: f64) -> Self {
        TwoFloat::from(v)
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
