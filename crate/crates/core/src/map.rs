//! Background map assembly: dynamic point removal, stitching, point-to-plane
//! ICP registration and fusion of additional captures.

use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CaptureSequence, FramePacket};
use crate::error::{Error, Result};
use crate::geometry::{round_pixel, Intrinsics, PointCloud, Pose};
use crate::raster::Mask;

pub const DEFAULT_VOXEL: f64 = 0.05;
const NORMAL_NEIGHBORS: usize = 20;

/// Drops sensor-frame points whose projection lands on a masked pixel.
/// Points behind the camera or outside the image are kept; order is preserved.
pub fn remove_dynamic_points(
    cloud: &PointCloud<f64>,
    world_from_sensor: &Pose<f64>,
    frame: &FramePacket,
) -> PointCloud<f64> {
    remove_masked(
        cloud,
        world_from_sensor,
        &frame.pose,
        &frame.intrinsics,
        &frame.mask,
    )
}

/// [`remove_dynamic_points`] against an explicit mask.
pub fn remove_masked(
    cloud: &PointCloud<f64>,
    world_from_sensor: &Pose<f64>,
    camera_from_world: &Pose<f64>,
    k: &Intrinsics<f64>,
    mask: &Mask,
) -> PointCloud<f64> {
    let camera_from_sensor = camera_from_world.compose(world_from_sensor);
    cloud.filter_indexed(|_, p| {
        let pc = camera_from_sensor.transform(p);
        match k
            .project_camera(&pc)
            .and_then(|q| round_pixel(q.u, q.v, k.width, k.height))
        {
            Some((x, y)) => !mask.get(x, y),
            None => true,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub voxel_size_m: f64,
    /// Masks are grown by this many pixels before removing dynamic points.
    pub mask_dilate_px: u32,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            voxel_size_m: DEFAULT_VOXEL,
            mask_dilate_px: 2,
        }
    }
}

/// World-frame background map of one capture.
pub fn stitch_map(seq: &CaptureSequence, config: &MapConfig) -> Result<PointCloud<f64>> {
    if seq.world_from_sensor.len() != seq.frames.len() || seq.clouds.len() != seq.frames.len() {
        let missing = seq
            .frames
            .get(seq.world_from_sensor.len().min(seq.clouds.len()))
            .map_or(0, |f| f.index);
        return Err(Error::frame(missing, "missing pose or cloud"));
    }
    let parts: Vec<PointCloud<f64>> = (0..seq.len())
        .into_par_iter()
        .map(|i| {
            let f = &seq.frames[i];
            let mask = if config.mask_dilate_px > 0 {
                f.mask.dilate(config.mask_dilate_px)
            } else {
                f.mask.clone()
            };
            let w = &seq.world_from_sensor[i];
            remove_masked(&seq.clouds[i], w, &f.pose, &f.intrinsics, &mask).transformed(w)
        })
        .collect();
    let mut all = PointCloud::default();
    for p in &parts {
        all.extend(p);
    }
    all.voxel_downsample(config.voxel_size_m)
}

fn build_tree(points: &[Vector3<f64>]) -> Result<ImmutableKdTree<f64, 3>> {
    let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    ImmutableKdTree::new_from_slice(&raw)
        .map_err(|e| Error::Numerical(format!("k-d tree construction: {e}")))
}

/// Unit normals from PCA over each point's nearest neighbors.
pub fn estimate_normals(points: &[Vector3<f64>], k: usize) -> Result<Vec<Vector3<f64>>> {
    let tree = build_tree(points)?;
    Ok(normals_with_tree(points, &tree, k))
}

fn normals_with_tree(
    points: &[Vector3<f64>],
    tree: &ImmutableKdTree<f64, 3>,
    k: usize,
) -> Vec<Vector3<f64>> {
    let k = NonZero::new(k.min(points.len()).max(1)).unwrap();
    points
        .par_iter()
        .map(|p| {
            let nn = tree
                .query(&[p.x, p.y, p.z])
                .nearest_n::<SquaredEuclidean<f64>>(k)
                .execute();
            let n = nn.len() as f64;
            let mean = nn
                .iter()
                .fold(Vector3::zeros(), |a, r| a + points[r.item as usize])
                / n;
            let mut cov = Matrix3::zeros();
            for r in &nn {
                let d = points[r.item as usize] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let (imin, _) = eig.eigenvalues.argmin();
            let mut normal: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
            // Deterministic orientation: toward the first positive component.
            let s = if normal.x != 0.0 {
                normal.x
            } else if normal.y != 0.0 {
                normal.y
            } else {
                normal.z
            };
            if s < 0.0 {
                normal = -normal;
            }
            normal
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the incremental update (radians + meters) drops below this.
    pub update_tol: f64,
    /// Source points used per iteration (evenly strided subset).
    pub max_source_points: usize,
    /// Correspondences farther than this never count as inliers (meters).
    pub max_correspondence_m: f64,
    /// Smallest acceptable fraction of source points with a target neighbor within
    /// `max_correspondence_m` after convergence.
    pub min_fitness: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            update_tol: 1e-6,
            max_source_points: 20_000,
            max_correspondence_m: 0.5,
            min_fitness: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps source coordinates into target coordinates.
    #[serde(with = "pose_json")]
    pub transform: Pose<f64>,
    /// RMS point-to-plane distance over inliers (meters).
    pub residual: f64,
    pub inlier_fraction: f64,
    /// Fraction of source points with a target neighbor within the correspondence cap.
    pub fitness: f64,
    pub iterations: usize,
}

pub(crate) mod pose_json {
    use nalgebra::{Matrix3, Vector3};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::Pose;

    #[derive(Serialize, Deserialize)]
    struct Raw {
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    }

    pub fn serialize<S: Serializer>(p: &Pose<f64>, s: S) -> Result<S::Ok, S::Error> {
        let r = p.rotation;
        Raw {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose<f64>, D::Error> {
        let raw = Raw::deserialize(d)?;
        let r = Matrix3::from_fn(|i, j| raw.rotation[i][j]);
        Pose::new(r, Vector3::from(raw.translation)).map_err(serde::de::Error::custom)
    }
}

struct Target<'a> {
    points: &'a [Vector3<f64>],
    normals: Vec<Vector3<f64>>,
    tree: ImmutableKdTree<f64, 3>,
}

struct Matches {
    /// (source index, target index, squared distance)
    pairs: Vec<(usize, usize, f64)>,
}

impl Target<'_> {
    fn matches(&self, source: &[Vector3<f64>], pose: &Pose<f64>) -> Matches {
        let pairs = source
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let q = pose.transform(p);
                let nn = self
                    .tree
                    .query(&[q.x, q.y, q.z])
                    .nearest_one::<SquaredEuclidean<f64>>()
                    .execute();
                (i, nn.item as usize, nn.distance)
            })
            .collect();
        Matches { pairs }
    }
}

/// Indices of correspondences closer than three times the median distance (and the cap).
fn inliers(m: &Matches, cap: f64) -> Vec<usize> {
    let mut d: Vec<f64> = m.pairs.iter().map(|p| p.2.sqrt()).collect();
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let limit = (3.0 * d[mid]).min(cap);
    // A perfect fit has median zero; keep exact matches in that case.
    m.pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.2.sqrt() < limit || p.2 == 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn plane_residual(src: &Vector3<f64>, pose: &Pose<f64>, tgt: &Target, j: usize) -> f64 {
    (pose.transform(src) - tgt.points[j]).dot(&tgt.normals[j])
}

fn rms(src: &[Vector3<f64>], pose: &Pose<f64>, tgt: &Target, m: &Matches, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::INFINITY;
    }
    let s: f64 = idx
        .iter()
        .map(|&k| plane_residual(&src[m.pairs[k].0], pose, tgt, m.pairs[k].1).powi(2))
        .sum();
    (s / idx.len() as f64).sqrt()
}

fn check_constrained(normals: &[Vector3<f64>]) -> Result<()> {
    let mut c = Matrix3::zeros();
    for n in normals {
        c += n * n.transpose();
    }
    c /= normals.len() as f64;
    let eig = SymmetricEigen::new(c).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo < 1e-3 * hi.max(f64::MIN_POSITIVE) {
        return Err(Error::UnconstrainedRegistration(format!(
            "target normals span fewer than three directions (eigenvalues {:.2e}..{:.2e})",
            lo, hi
        )));
    }
    Ok(())
}

/// Point-to-plane ICP of `source` onto `target`, starting from `init`.
///
/// The returned transform is the iterate with the lowest inlier residual, so the
/// result is never worse than `init` by that measure.
pub fn register_cloud(
    source: &PointCloud<f64>,
    target: &PointCloud<f64>,
    init: &Pose<f64>,
    config: &IcpConfig,
) -> Result<RegistrationResult> {
    if source.len() < 100 || target.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "registration needs at least 100 points per cloud (source {}, target {})",
            source.len(),
            target.len()
        )));
    }
    let tree = build_tree(&target.points)?;
    let normals = normals_with_tree(&target.points, &tree, NORMAL_NEIGHBORS);
    check_constrained(&normals)?;
    let tgt = Target {
        points: &target.points,
        normals,
        tree,
    };

    let stride = source.len().div_ceil(config.max_source_points.max(1));
    let src: Vec<Vector3<f64>> = source.points.iter().step_by(stride).copied().collect();

    let mut pose = *init;
    let mut best: Option<(f64, Pose<f64>, f64)> = None;
    let mut iterations = 0;
    loop {
        let m = tgt.matches(&src, &pose);
        let idx = inliers(&m, config.max_correspondence_m);
        let r = rms(&src, &pose, &tgt, &m, &idx);
        let frac = idx.len() as f64 / src.len() as f64;
        if best.is_none_or(|b| r < b.0) {
            best = Some((r, pose, frac));
        }
        if iterations >= config.max_iterations || idx.len() < 6 {
            break;
        }
        let mut a = Matrix6::zeros();
        let mut b = Vector6::zeros();
        for &k in &idx {
            let (i, j, _) = m.pairs[k];
            let p = pose.transform(&src[i]);
            let n = tgt.normals[j];
            let c = p.cross(&n);
            let jrow = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            let res = (p - tgt.points[j]).dot(&n);
            a += jrow * jrow.transpose();
            b -= jrow * res;
        }
        let Some(x) = a.cholesky().map(|ch| ch.solve(&b)) else {
            return Err(Error::UnconstrainedRegistration(
                "singular point-to-plane system".into(),
            ));
        };
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite ICP update".into()));
        }
        let omega = Vector3::new(x[0], x[1], x[2]);
        let angle = omega.norm();
        let delta = if angle > 0.0 {
            Pose::from_axis_angle(omega / angle, angle, Vector3::new(x[3], x[4], x[5]))
        } else {
            Pose::from_translation(Vector3::new(x[3], x[4], x[5]))
        };
        pose = delta.compose(&pose);
        iterations += 1;
        if x.norm() < config.update_tol {
            let m = tgt.matches(&src, &pose);
            let idx = inliers(&m, config.max_correspondence_m);
            let r = rms(&src, &pose, &tgt, &m, &idx);
            if best.is_none_or(|b| r < b.0) {
                best = Some((r, pose, idx.len() as f64 / src.len() as f64));
            }
            break;
        }
    }
    let (residual, transform, inlier_fraction) = best.expect("at least one evaluation");
    if !residual.is_finite() {
        return Err(Error::RegistrationFailed("no correspondences".into()));
    }
    let cap2 = config.max_correspondence_m.powi(2);
    let m = tgt.matches(&src, &transform);
    let fitness = m.pairs.iter().filter(|p| p.2 <= cap2).count() as f64 / src.len() as f64;
    Ok(RegistrationResult {
        transform,
        residual,
        inlier_fraction,
        fitness,
        iterations,
    })
}

/// Registers the stitched map of `extra` against `base`, returning the merged
/// map, the corrected world-from-sensor poses of `extra`, and the registration.
pub fn fuse_maps(
    base: &PointCloud<f64>,
    extra: &CaptureSequence,
    map: &MapConfig,
    icp: &IcpConfig,
) -> Result<(PointCloud<f64>, Vec<Pose<f64>>, RegistrationResult)> {
    let stitched = stitch_map(extra, map)?;
    let reg = register_cloud(&stitched, base, &Pose::identity(), icp)?;
    if reg.fitness < icp.min_fitness {
        return Err(Error::RegistrationFailed(format!(
            "only {:.1}% of points found a partner within {} m (need {:.1}%)",
            100.0 * reg.fitness,
            icp.max_correspondence_m,
            100.0 * icp.min_fitness
        )));
    }
    let poses = extra
        .world_from_sensor
        .iter()
        .map(|w| reg.transform.compose(w))
        .collect();
    let mut merged = base.clone();
    merged.extend(&stitched.transformed(&reg.transform));
    Ok((merged.voxel_downsample(map.voxel_size_m)?, poses, reg))
}
