//! Floating point scalar abstraction shared by every numeric kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Name recorded in model manifests.
    const NAME: &'static str;

    /// Tolerance used when checking that a probability vector sums to one.
    fn norm_tolerance() -> Self;

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Log value used in place of `ln(0)` so that sums and sorts stay finite.
    fn log_zero() -> Self {
        Self::from_f64_lossy(-1.0e30)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn norm_tolerance() -> Self {
        1.0e-5
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn norm_tolerance() -> Self {
        1.0e-9
    }
}

/// Natural log clamped to [`Scalar::log_zero`] for zero probabilities.
pub fn safe_ln<T: Scalar>(p: T) -> T {
    if p > T::zero() {
        p.ln().max(T::log_zero())
    } else {
        T::log_zero()
    }
}
