use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Minimum camera-frame depth for a point to count as in front of the camera (meters).
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics. Pixel `(i, j)` has its center at image coordinates `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

/// A point projected into an image: subpixel coordinates plus camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected<T> {
    pub u: T,
    pub v: T,
    pub z: T,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point and a focal length giving the requested horizontal field of view.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(
            T::lit(f),
            T::lit(f),
            T::lit((width as f64 - 1.0) * 0.5),
            T::lit((height as f64 - 1.0) * 0.5),
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let ok = self.fx > zero
            && self.fy > zero
            && self.width > 0
            && self.height > 0
            && self.cx >= zero
            && self.cx < T::from_usize_lossy(self.width as usize)
            && self.cy >= zero
            && self.cy < T::from_usize_lossy(self.height as usize);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid intrinsics {self:?}"
            )))
        }
    }

    #[inline]
    pub fn project_camera(&self, p: &Vector3<T>) -> Option<Projected<T>> {
        if p.z <= T::lit(MIN_DEPTH) {
            return None;
        }
        Some(Projected {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
            z: p.z,
        })
    }

    #[inline]
    pub fn unproject_camera(&self, u: T, v: T, depth: T) -> Vector3<T> {
        Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Unit-free ray direction (z = 1) through image coordinates `(u, v)`.
    #[inline]
    pub fn ray(&self, u: T, v: T) -> Vector3<T> {
        self.unproject_camera(u, v, T::one())
    }

    #[inline]
    pub fn contains(&self, u: T, v: T) -> bool {
        u >= T::zero()
            && v >= T::zero()
            && u <= T::from_usize_lossy(self.width as usize - 1)
            && v <= T::from_usize_lossy(self.height as usize - 1)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn cast<U: Real>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::lit(self.fx.f64()),
            fy: U::lit(self.fy.f64()),
            cx: U::lit(self.cx.f64()),
            cy: U::lit(self.cy.f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Nearest-integer pixel for a subpixel coordinate, rounding halves up.
#[inline]
pub fn round_pixel<T: Real>(u: T, v: T, width: u32, height: u32) -> Option<(u32, u32)> {
    let half = T::lit(0.5);
    let x = (u + half).floor();
    let y = (v + half).floor();
    if x < T::zero() || y < T::zero() {
        return None;
    }
    let (x, y) = (x.f64() as u64, y.f64() as u64);
    if x >= width as u64 || y >= height as u64 {
        return None;
    }
    Some((x as u32, y as u32))
}
