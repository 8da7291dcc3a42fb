//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the estimators and test statistics are generic over.
///
/// Implemented for `f32` and `f64`. Special functions (erfc, normal
/// quantile, log-gamma) are evaluated in `f64` and converted back.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every `Real` can represent (a rounding of) any finite `f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Tolerance floor for iterative solvers at this precision.
    #[inline]
    fn solver_floor() -> Self {
        Self::epsilon() * Self::lit(16.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Clamps a requested tolerance so it is reachable at the scalar's precision.
pub(crate) fn reachable_tol<T: Real>(tol: f64) -> T {
    T::lit(tol).max(T::solver_floor())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f64 as Real>::lit(0.25), 0.25);
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert!(reachable_tol::<f32>(1e-12) > 1e-12);
        assert_eq!(reachable_tol::<f64>(1e-8), 1e-8);
    }
}
