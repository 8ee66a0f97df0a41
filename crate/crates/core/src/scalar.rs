//! Numeric traits the toolkit is generic over.
//!
//! Hidden-space coordinates and distances use [`Scalar`] (`f32` or `f64`).
//! Quantities derived from ranks (disorder constants, annulus radii, fitted
//! slopes) use [`RankReal`], which additionally admits the exact rational
//! type [`Exact`] so brute-force results never go through rounding.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating point type used for coordinates and distances: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Exact rational used for rank ratios.
pub type Exact = Ratio<i64>;

/// A real number in which rank bounds can be evaluated.
pub trait RankReal: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug {
    fn ceil(self) -> Self;
    fn floor(self) -> Self;

    fn from_rank(r: u64) -> Self {
        Self::from_u64(r).expect("rank fits the real type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl RankReal for f32 {
    fn ceil(self) -> Self {
        f32::ceil(self)
    }
    fn floor(self) -> Self {
        f32::floor(self)
    }
}

impl RankReal for f64 {
    fn ceil(self) -> Self {
        f64::ceil(self)
    }
    fn floor(self) -> Self {
        f64::floor(self)
    }
}

impl RankReal for Exact {
    fn ceil(self) -> Self {
        Ratio::ceil(&self)
    }
    fn floor(self) -> Self {
        Ratio::floor(&self)
    }
}

/// Clamp a real to a non-negative integer, saturating on overflow.
pub(crate) fn to_rank<R: RankReal>(x: R) -> i64 {
    x.to_i64().unwrap_or(if x > R::zero() { i64::MAX } else { i64::MIN })
}

pub(crate) fn display_exact(x: &Exact) -> String {
    if *x.denom() == 1 {
        format!("{}", x.numer())
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_ceil_and_floor() {
        let x = Exact::new(7, 2);
        assert_eq!(RankReal::ceil(x), Exact::from_integer(4));
        assert_eq!(RankReal::floor(x), Exact::from_integer(3));
        assert_eq!(to_rank(RankReal::ceil(x)), 4);
    }

    #[test]
    fn float_and_exact_agree_on_integers() {
        let a: f64 = RankReal::ceil(10.0 / 3.0);
        let b = RankReal::ceil(Exact::new(10, 3));
        assert_eq!(a as i64, to_rank(b));
    }
}
