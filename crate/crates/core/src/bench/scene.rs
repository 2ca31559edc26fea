//! Scene descriptions for the synthetic RGB-D benchmark.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Procedural surface texture. Coordinates are surface meters divided by the texture scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    /// Soft-edged checkerboard alternating between two colors.
    Checker { a: [u8; 3], b: [u8; 3] },
    /// Smooth two-octave value noise blending two colors.
    Noise { a: [u8; 3], b: [u8; 3], seed: u32 },
    /// Running-bond bricks with soft mortar joints.
    Bricks {
        brick: [u8; 3],
        mortar: [u8; 3],
        seed: u32,
    },
    /// Uniform color.
    Solid { color: [u8; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    /// One corner of the rectangle (world meters).
    pub origin: [f64; 3],
    /// Edge directions from `origin`; normalized on use.
    pub u_axis: [f64; 3],
    pub v_axis: [f64; 3],
    /// Edge lengths along `u_axis` and `v_axis` (meters).
    pub extent: [f64; 2],
    pub texture: Texture,
    pub texture_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    /// Rotation about the world vertical (y) axis.
    #[serde(default)]
    pub yaw_deg: f64,
    pub texture: Texture,
    pub texture_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderKey {
    pub center: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
}

/// A moving box, one key per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderSpec {
    pub half_extent: [f64; 3],
    pub color: [u8; 3],
    pub track: Vec<OccluderKey>,
}

/// Camera (and co-located lidar) placement for one frame. World axes: x right,
/// y down, z forward; orientation is yaw about y, then pitch about x, then roll about z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraKey {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
}

/// Spinning lidar restricted to a horizontal sector: `rings` beams evenly spread
/// over `vertical_fov_deg` (elevation, positive up) and `rays_per_ring` azimuths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    pub rings: usize,
    pub vertical_fov_deg: [f64; 2],
    pub horizontal_fov_deg: f64,
    pub rays_per_ring: usize,
    pub range_noise_sigma: f64,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            rings: 40,
            vertical_fov_deg: [-30.0, 30.0],
            horizontal_fov_deg: 80.0,
            rays_per_ring: 800,
            range_noise_sigma: 0.01,
            max_range: 120.0,
        }
    }
}

/// Affine exposure applied to rendered colors: `gain * c + bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exposure {
    pub gain: f64,
    pub bias: f64,
}

impl Default for Exposure {
    fn default() -> Self {
        Exposure {
            gain: 1.0,
            bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub seed: u64,
    /// Samples per pixel along each axis for antialiasing.
    #[serde(default = "default_supersample")]
    pub supersample: u32,
    #[serde(default)]
    pub planes: Vec<PlaneSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub occluders: Vec<OccluderSpec>,
    pub trajectory: Vec<CameraKey>,
    #[serde(default)]
    pub lidar: LidarSpec,
    /// Per-frame exposure; empty means unit gain and zero bias everywhere.
    #[serde(default)]
    pub exposure: Vec<Exposure>,
    /// Color returned by rays that hit nothing.
    #[serde(default = "default_sky")]
    pub background: [u8; 3],
}

fn default_supersample() -> u32 {
    2
}

fn default_sky() -> [u8; 3] {
    [150, 180, 220]
}

impl SceneSpec {
    pub fn frame_count(&self) -> usize {
        self.trajectory.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!("image {}x{} too small", self.width, self.height));
        }
        if !(self.hfov_deg > 1.0 && self.hfov_deg < 170.0) {
            return bad(format!("hfov {} out of range", self.hfov_deg));
        }
        if self.trajectory.is_empty() {
            return bad("empty trajectory".into());
        }
        if self.supersample == 0 {
            return bad("supersample must be at least 1".into());
        }
        let n = self.trajectory.len();
        for (i, occ) in self.occluders.iter().enumerate() {
            if occ.track.len() != n {
                return bad(format!(
                    "occluder {i} track has {} keys for {n} frames",
                    occ.track.len()
                ));
            }
        }
        if !self.exposure.is_empty() && self.exposure.len() != n {
            return bad(format!(
                "{} exposure entries for {n} frames",
                self.exposure.len()
            ));
        }
        for p in &self.planes {
            if !(p.extent[0] > 0.0 && p.extent[1] > 0.0 && p.texture_scale > 0.0) {
                return bad("plane extent and texture scale must be positive".into());
            }
        }
        for b in &self.boxes {
            if b.half_extent.iter().any(|h| *h <= 0.0) || b.texture_scale <= 0.0 {
                return bad("box extents and texture scale must be positive".into());
            }
        }
        let l = &self.lidar;
        if l.rings < 1 || l.rays_per_ring < 1 || l.max_range <= 0.0 || l.range_noise_sigma < 0.0 {
            return bad("invalid lidar model".into());
        }
        Ok(())
    }
}
