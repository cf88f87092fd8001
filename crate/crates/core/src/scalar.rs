//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra as na;
use num_traits as nt;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the geometry and solvers are generic over (`f32` or `f64`).
///
/// Math goes through [`na::RealField`]; conversions go through `num-traits`.
pub trait Real:
    na::RealField
    + Copy
    + Default
    + nt::FromPrimitive
    + nt::ToPrimitive
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Tolerance used where an algorithm needs "numerically zero" relative to unit scale.
    const TINY: Self;

    /// Converts an `f64` constant or parameter into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        na::convert(x)
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as nt::FromPrimitive>::from_usize(n).expect("count representable as float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).expect("float converts to f64")
    }

    /// `max(tol, k * machine epsilon)`; lets fixed f64 tolerances degrade gracefully for f32.
    #[inline]
    fn tol(tol: f64) -> Self {
        let floor = Self::default_epsilon() * Self::lit(64.0);
        let t = Self::lit(tol);
        if t > floor {
            t
        } else {
            floor
        }
    }
}

impl Real for f32 {
    const TINY: Self = 1e-6;
}

impl Real for f64 {
    const TINY: Self = 1e-12;
}
