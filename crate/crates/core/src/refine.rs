//! Per-frame camera rotation refinement by discrete pitch/yaw search against a
//! colored map, scored on the ring of known pixels around the mask.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FramePacket;
use crate::error::{Error, Result};
use crate::geometry::{
    pitch_yaw_rotation, project_point, render_depth, round_pixel, DepthMap, Intrinsics, PointCloud,
    Pose,
};
use crate::raster::{sample_rgb, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    pub enabled: bool,
    pub pitch_range_deg: f64,
    pub yaw_range_deg: f64,
    pub step_deg: f64,
    pub ring_px: u32,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            enabled: true,
            pitch_range_deg: 1.0,
            yaw_range_deg: 1.0,
            step_deg: 0.05,
            ring_px: 20,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_deg > 0.0
            && self.pitch_range_deg >= self.step_deg
            && self.yaw_range_deg >= self.step_deg
            && self.ring_px >= 1
            && self.pitch_range_deg.is_finite()
            && self.yaw_range_deg.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid refinement settings {self:?}"
            )))
        }
    }

    fn steps(&self) -> (i64, i64) {
        (
            (self.pitch_range_deg / self.step_deg).round() as i64,
            (self.yaw_range_deg / self.step_deg).round() as i64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementResult {
    /// Refined camera-from-world pose.
    pub pose: Pose<f64>,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub error: f64,
    pub initial_error: f64,
    /// Every grid cell scored infinite; the initial rotation was kept.
    pub no_improvement: bool,
}

impl RefinementResult {
    pub fn rotation(&self) -> Matrix3<f64> {
        self.pose.rotation
    }
}

/// Known pixels within `width` of the mask: the dilated mask minus the mask.
pub fn ring_mask(mask: &Mask, width: u32) -> Mask {
    mask.dilate(width).minus(mask)
}

/// Rotates the camera about its own center by a pitch/yaw offset (degrees),
/// applied in the camera frame.
pub fn offset_pose(pose: &Pose<f64>, pitch_deg: f64, yaw_deg: f64) -> Pose<f64> {
    let r = pitch_yaw_rotation(pitch_deg.to_radians(), yaw_deg.to_radians());
    Pose {
        rotation: r * pose.rotation,
        translation: r * pose.translation,
    }
}

/// Mean squared RGB distance between map point colors and the image at their
/// projections, over points whose rounded projection lies in `ring`.
/// Returns `f64::INFINITY` when no point contributes.
pub fn photometric_error(
    frame: &FramePacket,
    map: &PointCloud<f64>,
    pose: &Pose<f64>,
    ring: &Mask,
) -> Result<f64> {
    let colors = map
        .colors
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("map has no colors".into()))?;
    let k = &frame.intrinsics;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, c) in map.points.iter().zip(colors) {
        let Some(q) = project_point(p, pose, k) else {
            continue;
        };
        let Some((x, y)) = round_pixel(q.u, q.v, k.width, k.height) else {
            continue;
        };
        if !ring.get(x, y) {
            continue;
        }
        let Some(s) = sample_rgb::<f64>(&frame.image, q.u, q.v) else {
            continue;
        };
        sum += (0..3).map(|i| (s[i] - c[i] as f64).powi(2)).sum::<f64>();
        n += 1;
    }
    Ok(if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    })
}

fn min3x3(depth: &DepthMap<f64>, x: u32, y: u32) -> Option<f64> {
    let mut best: Option<f64> = None;
    for yy in y.saturating_sub(1)..=(y + 1).min(depth.height - 1) {
        for xx in x.saturating_sub(1)..=(x + 1).min(depth.width - 1) {
            if let Some(d) = depth.get(xx, yy) {
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
    }
    best
}

/// Flags map points that are the nearest surface along their pixel ray, using a
/// z-buffer of the map itself with a 3×3 minimum and a depth tolerance of
/// `max(tol_m, tol_rel · z)`.
pub fn visible_points(
    map: &PointCloud<f64>,
    pose: &Pose<f64>,
    k: &Intrinsics<f64>,
    tol_m: f64,
    tol_rel: f64,
) -> Vec<bool> {
    let zbuf = render_depth(map, pose, k);
    map.points
        .par_iter()
        .map(|p| {
            let Some(q) = project_point(p, pose, k) else {
                return false;
            };
            let Some((x, y)) = round_pixel(q.u, q.v, k.width, k.height) else {
                return false;
            };
            let zmin = min3x3(&zbuf, x, y).unwrap_or(q.z);
            q.z <= zmin + tol_m.max(tol_rel * zmin)
        })
        .collect()
}

/// Colors each map point with the mean of the unmasked image samples of the
/// frames that see it. Points seen by no frame are dropped.
pub fn colorize_map(map: &PointCloud<f64>, frames: &[&FramePacket]) -> PointCloud<f64> {
    let mut acc = vec![[0.0f64; 3]; map.len()];
    let mut count = vec![0u32; map.len()];
    for f in frames {
        let vis = visible_points(map, &f.pose, &f.intrinsics, 0.05, 0.02);
        let samples: Vec<Option<[f64; 3]>> = map
            .points
            .par_iter()
            .zip(vis.par_iter())
            .map(|(p, v)| {
                if !*v {
                    return None;
                }
                let q = project_point(p, &f.pose, &f.intrinsics)?;
                crate::raster::sample_rgb_unmasked(&f.image, &f.mask, q.u, q.v)
            })
            .collect();
        for (i, s) in samples.into_iter().enumerate() {
            if let Some(s) = s {
                for c in 0..3 {
                    acc[i][c] += s[c];
                }
                count[i] += 1;
            }
        }
    }
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for i in 0..map.len() {
        if count[i] > 0 {
            points.push(map.points[i]);
            colors.push(acc[i].map(|v| crate::raster::to_u8(v / count[i] as f64)));
        }
    }
    PointCloud {
        points,
        colors: Some(colors),
    }
}

/// Map points that can influence the error: visible from the initial pose and
/// projecting within reach of the ring for any offset on the grid.
pub fn candidate_points(
    frame: &FramePacket,
    map: &PointCloud<f64>,
    ring: &Mask,
    config: &RefinementConfig,
) -> PointCloud<f64> {
    let k = &frame.intrinsics;
    let max_deg = config.pitch_range_deg.hypot(config.yaw_range_deg);
    let margin = (k.fx.max(k.fy) * max_deg.to_radians().tan()).ceil() as u32 + 2;
    let reach = ring.dilate(margin);
    let vis = visible_points(map, &frame.pose, k, 0.05, 0.02);
    map.filter_indexed(|i, p| {
        vis[i]
            && project_point(p, &frame.pose, k)
                .and_then(|q| round_pixel(q.u, q.v, k.width, k.height))
                .is_some_and(|(x, y)| reach.get(x, y))
    })
}

/// Exhaustive pitch × yaw grid search around the frame's current rotation.
///
/// The camera center is held fixed. Scores are evaluated on
/// [`candidate_points`], so `error` and `initial_error` refer to that subset.
/// Ties go to the smaller offset magnitude, then the smaller pitch, then the smaller yaw.
pub fn refine_rotation(
    frame: &FramePacket,
    map: &PointCloud<f64>,
    config: &RefinementConfig,
) -> Result<RefinementResult> {
    config.validate()?;
    if map.colors.is_none() {
        return Err(Error::InvalidArgument(
            "refinement needs a colored map".into(),
        ));
    }
    let ring = ring_mask(&frame.mask, config.ring_px);
    let pts = candidate_points(frame, map, &ring, config);
    let (np, ny) = config.steps();
    let cells: Vec<(i64, i64)> = (-np..=np)
        .flat_map(|i| (-ny..=ny).map(move |j| (i, j)))
        .collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let pose = offset_pose(
                &frame.pose,
                i as f64 * config.step_deg,
                j as f64 * config.step_deg,
            );
            photometric_error(frame, &pts, &pose, &ring)
        })
        .collect::<Result<_>>()?;
    let initial_error = scores[cells
        .iter()
        .position(|c| *c == (0, 0))
        .expect("grid contains origin")];
    let key = |k: usize| {
        let (i, j) = cells[k];
        (scores[k], i * i + j * j, i, j)
    };
    let best = (0..cells.len())
        .min_by(|&a, &b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.cmp(&kb.1))
                .then(ka.2.cmp(&kb.2))
                .then(ka.3.cmp(&kb.3))
        })
        .expect("non-empty grid");
    if !scores[best].is_finite() {
        return Ok(RefinementResult {
            pose: frame.pose,
            pitch_deg: 0.0,
            yaw_deg: 0.0,
            error: f64::INFINITY,
            initial_error,
            no_improvement: true,
        });
    }
    let (i, j) = cells[best];
    let (pitch_deg, yaw_deg) = (i as f64 * config.step_deg, j as f64 * config.step_deg);
    Ok(RefinementResult {
        pose: offset_pose(&frame.pose, pitch_deg, yaw_deg),
        pitch_deg,
        yaw_deg,
        error: scores[best],
        initial_error,
        no_improvement: false,
    })
}
