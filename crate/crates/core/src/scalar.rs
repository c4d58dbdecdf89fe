//! Scalar abstraction for the numerical core.
//!
//! Gram blocks, selection objectives and the regression solvers are written
//! against [`Scalar`] so they run in either `f32` or `f64`. Event data and
//! model parameters stay in `f64` and are converted at the design boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    /// Bound on `||G * G^-1 - I||_inf` before a cached inverse is rebuilt.
    const DRIFT_TOL: f64;

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f64 {
    const DRIFT_TOL: f64 = 1e-9;
}

impl Scalar for f32 {
    const DRIFT_TOL: f64 = 1e-3;
}
