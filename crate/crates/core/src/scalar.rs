//! Scalar abstraction shared by every numeric module.
//!
//! All geometry, network and optimization code is written against [`Real`],
//! which is implemented for `f32` and `f64`. Tolerances are carried by the
//! scalar type so that single-precision builds get thresholds that are
//! actually reachable.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the manifold and network code.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Default bound on `‖XᵀX − I‖_F` for points on the manifold.
    const ORTHONORMALITY_TOL: f64;
    /// Default bound on `‖Xᵀv + vᵀX‖_F` for tangent vectors.
    const TANGENCY_TOL: f64;
    /// Smallest singular value accepted when projecting onto the manifold.
    const RANK_TOL: f64;
    /// Bound on `‖Ȳ − F̄‖_F` relative to `max(1, max_i ‖F_i‖_F)`.
    const TRACKING_TOL: f64;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("finite scalar converts to f64")
    }
}

impl Real for f64 {
    const ORTHONORMALITY_TOL: f64 = 1e-10;
    const TANGENCY_TOL: f64 = 1e-10;
    const RANK_TOL: f64 = 1e-12;
    const TRACKING_TOL: f64 = 1e-10;
}

impl Real for f32 {
    const ORTHONORMALITY_TOL: f64 = 1e-4;
    const TANGENCY_TOL: f64 = 1e-4;
    const RANK_TOL: f64 = 1e-6;
    const TRACKING_TOL: f64 = 1e-3;
}
