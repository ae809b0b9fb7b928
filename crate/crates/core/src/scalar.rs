//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Everything in the crate is written against this trait. Extended-real
/// values (`+inf` singular controls) rely on IEEE infinities, so only
/// `Float` types qualify.
pub trait Real: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Absolute tolerance used when validating probabilities, adaptedness
    /// and monotonicity.
    fn validation_tol() -> Self;

    /// Converts an `f64` literal. Panics only for values the type cannot
    /// represent at all, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    #[inline]
    fn validation_tol() -> Self {
        1e-5
    }
}

impl Real for f64 {
    #[inline]
    fn validation_tol() -> Self {
        1e-12
    }
}

/// `a == b` (covers equal infinities) or `|a - b| <= tol`.
#[inline]
pub(crate) fn close<T: Real>(a: T, b: T, tol: T) -> bool {
    a == b || (a - b).abs() <= tol
}

/// `e^{-x}` with `e^{-inf} = 0`.
#[inline]
pub(crate) fn survival<T: Real>(x: T) -> T {
    if x == T::infinity() {
        T::zero()
    } else {
        (-x).exp()
    }
}
