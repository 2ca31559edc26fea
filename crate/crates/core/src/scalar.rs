//! Floating-point scalar abstraction shared by the geometric and numerical kernels.

use std::fmt::Debug;

use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar used by cameras, clouds, solvers and metrics: `f32` or `f64`.
pub trait Real:
    nalgebra::RealField + Copy + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}
