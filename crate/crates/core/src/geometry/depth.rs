use nalgebra::Vector3;
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::geometry::{round_pixel, Intrinsics, PointCloud, Pose, Projected};
use crate::scalar::Real;

/// Per-pixel camera-frame depth in meters. Values `<= 0` mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<T>,
}

impl<T: Real> DepthMap<T> {
    pub fn invalid(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            data: vec![T::zero(); width as usize * height as usize],
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<T> {
        let d = self.data[self.index(x, y)];
        (d > T::zero()).then_some(d)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, d: T) {
        let i = self.index(x, y);
        self.data[i] = d;
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.get(x, y).is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > T::zero()).count()
    }

    /// Bilinear depth at a subpixel location, falling back to the nearest valid
    /// tap when some of the four neighbors are invalid.
    pub fn sample(&self, u: T, v: T) -> Option<T> {
        if u < T::zero() || v < T::zero() {
            return None;
        }
        let (w, h) = (self.width as usize, self.height as usize);
        let x0 = u.floor().f64() as usize;
        let y0 = v.floor().f64() as usize;
        if x0 >= w || y0 >= h {
            return None;
        }
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = u - T::from_usize_lossy(x0);
        let fy = v - T::from_usize_lossy(y0);
        let taps = [
            (x0, y0, (T::one() - fx) * (T::one() - fy)),
            (x1, y0, fx * (T::one() - fy)),
            (x0, y1, (T::one() - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = T::zero();
        let mut all_valid = true;
        let mut best: Option<(T, T)> = None;
        for &(x, y, wt) in &taps {
            let d = self.data[y * w + x];
            if d > T::zero() {
                acc += wt * d;
                if best.is_none_or(|(bw, _)| wt > bw) {
                    best = Some((wt, d));
                }
            } else if wt > T::zero() {
                all_valid = false;
            }
        }
        if all_valid {
            Some(acc)
        } else {
            best.map(|(_, d)| d)
        }
    }
}

/// Projects a world point. Returns `None` when the point is behind the camera.
#[inline]
pub fn project_point<T: Real>(
    p: &Vector3<T>,
    pose: &Pose<T>,
    k: &Intrinsics<T>,
) -> Option<Projected<T>> {
    k.project_camera(&pose.transform(p))
}

/// Back-projects image coordinates at camera depth `depth` into world coordinates.
pub fn unproject_pixel<T: Real>(
    u: T,
    v: T,
    depth: T,
    pose: &Pose<T>,
    k: &Intrinsics<T>,
) -> Result<Vector3<T>> {
    if !(depth > T::zero()) || !depth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-positive depth {depth:?}"
        )));
    }
    let cam = k.unproject_camera(u, v, depth);
    Ok(pose.rotation.transpose() * (cam - pose.translation))
}

/// Z-buffer rasterization of a cloud: each pixel keeps the nearest camera depth
/// among the points rounding into it.
pub fn render_depth<T: Real>(
    cloud: &PointCloud<T>,
    pose: &Pose<T>,
    k: &Intrinsics<T>,
) -> DepthMap<T> {
    let mut depth = DepthMap::invalid(k.width, k.height);
    for p in &cloud.points {
        let Some(proj) = project_point(p, pose, k) else {
            continue;
        };
        let Some((x, y)) = round_pixel(proj.u, proj.v, k.width, k.height) else {
            continue;
        };
        let i = depth.index(x, y);
        let cur = depth.data[i];
        if cur <= T::zero() || proj.z < cur {
            depth.data[i] = proj.z;
        }
    }
    depth
}

struct Seed {
    x: f64,
    y: f64,
    depth: f64,
}

impl HasPosition for Seed {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        Point2::new(self.x, self.y)
    }
}

/// Piecewise-linear interpolation of the valid pixels over their Delaunay
/// triangulation. Pixels outside the seeds' convex hull stay invalid.
pub fn interpolate_depth<T: Real>(sparse: &DepthMap<T>) -> Result<DepthMap<T>> {
    let (w, h) = (sparse.width, sparse.height);
    let mut seeds = Vec::with_capacity(sparse.valid_count());
    for y in 0..h {
        for x in 0..w {
            if let Some(d) = sparse.get(x, y) {
                seeds.push(Seed {
                    x: x as f64,
                    y: y as f64,
                    depth: d.f64(),
                });
            }
        }
    }
    if seeds.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} depth seeds, need at least 3",
            seeds.len()
        )));
    }
    let tri = DelaunayTriangulation::<Seed>::bulk_load(seeds)
        .map_err(|e| Error::Numerical(format!("triangulation failed: {e:?}")))?;
    if tri.num_inner_faces() == 0 {
        return Err(Error::InsufficientData("depth seeds are collinear".into()));
    }

    let mut out = sparse.clone();
    let mut filled = vec![false; out.data.len()];
    for (i, d) in sparse.data.iter().enumerate() {
        filled[i] = *d > T::zero();
    }
    const EDGE_EPS: f64 = 1e-9;
    for face in tri.inner_faces() {
        let [va, vb, vc] = face.vertices();
        let (a, b, c) = (va.data(), vb.data(), vc.data());
        let det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
        if det.abs() < 1e-12 {
            continue;
        }
        let xmin = a.x.min(b.x).min(c.x).ceil().max(0.0) as u32;
        let xmax = (a.x.max(b.x).max(c.x).floor() as u32).min(w - 1);
        let ymin = a.y.min(b.y).min(c.y).ceil().max(0.0) as u32;
        let ymax = (a.y.max(b.y).max(c.y).floor() as u32).min(h - 1);
        for y in ymin..=ymax {
            for x in xmin..=xmax {
                let i = y as usize * w as usize + x as usize;
                if filled[i] {
                    continue;
                }
                let (px, py) = (x as f64, y as f64);
                let l1 = ((b.y - c.y) * (px - c.x) + (c.x - b.x) * (py - c.y)) / det;
                let l2 = ((c.y - a.y) * (px - c.x) + (a.x - c.x) * (py - c.y)) / det;
                let l3 = 1.0 - l1 - l2;
                if l1 < -EDGE_EPS || l2 < -EDGE_EPS || l3 < -EDGE_EPS {
                    continue;
                }
                let d = l1 * a.depth + l2 * b.depth + l3 * c.depth;
                out.data[i] = T::lit(d);
                filled[i] = true;
            }
        }
    }
    Ok(out)
}

/// `radius`-sized square median over valid samples; invalid pixels stay invalid.
/// Even sample counts average the two middle values.
pub fn median_filter<T: Real>(depth: &DepthMap<T>, radius: u32) -> DepthMap<T> {
    let (w, h) = (depth.width as i64, depth.height as i64);
    let r = radius as i64;
    let mut out = depth.clone();
    let mut window: Vec<T> = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if depth.data[i] <= T::zero() {
                continue;
            }
            window.clear();
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    let d = depth.data[(yy * w + xx) as usize];
                    if d > T::zero() {
                        window.push(d);
                    }
                }
            }
            window.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite depth"));
            let n = window.len();
            out.data[i] = if n % 2 == 1 {
                window[n / 2]
            } else {
                (window[n / 2 - 1] + window[n / 2]) * T::lit(0.5)
            };
        }
    }
    out
}

/// Sparse z-buffer depth to dense depth: linear interpolation then a 5×5 median.
pub fn densify_depth<T: Real>(sparse: &DepthMap<T>) -> Result<DepthMap<T>> {
    let interpolated = interpolate_depth(sparse)?;
    Ok(median_filter(&interpolated, 2))
}
