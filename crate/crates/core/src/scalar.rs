//! Scalar abstraction shared by every numerical module.
//!
//! The physics code is written once against [`Real`] and instantiated for
//! `f64` (the default everywhere) and `f32`. Tolerances that only make sense
//! relative to the working precision live on the trait.

use nalgebra::RealField;
use num_traits::ToPrimitive;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type usable by the library (`f32` or `f64`).
pub trait Real:
    RealField + Copy + ToPrimitive + Default + Send + Sync + Serialize + DeserializeOwned
{
    /// Relative agreement required between a quadrature and its node-doubled refinement.
    const QUADRATURE_RTOL: f64;
    /// Smallest surviving norm fraction accepted while orthogonalizing a new basis vector.
    const RANK_TOL: f64;
    /// Largest truncation residual `1 - Σ c²` accepted for a displaced state.
    const TRUNCATION_TOL: f64;
    /// Support threshold for the SLD solver, relative to the largest eigenvalue.
    const SUPPORT_EPS: f64;
}

impl Real for f64 {
    const QUADRATURE_RTOL: f64 = 1e-10;
    const RANK_TOL: f64 = 1e-10;
    const TRUNCATION_TOL: f64 = 1e-6;
    const SUPPORT_EPS: f64 = 1e-12;
}

impl Real for f32 {
    const QUADRATURE_RTOL: f64 = 1e-4;
    const RANK_TOL: f64 = 1e-4;
    const TRUNCATION_TOL: f64 = 1e-4;
    const SUPPORT_EPS: f64 = 1e-6;
}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Lossy conversion back to `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
