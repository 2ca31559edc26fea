//! Ray-cast renderer producing RGB, ground-truth background, occluder masks,
//! depth and lidar sweeps for a [`SceneSpec`].

use image::RgbImage;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bench::scene::{BoxSpec, CameraKey, OccluderSpec, SceneSpec, Texture};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, PointCloud, Pose};
use crate::raster::{to_u8, Mask};

/// Object id carried by lidar returns from static geometry; occluder `k` gets `k + 1`.
pub const BACKGROUND_ID: u32 = 0;

#[derive(Debug, Clone)]
enum Material {
    Textured { texture: Texture, scale: f64 },
    Flat([f64; 3]),
}

/// Finite rectangle `origin + s·u + t·v`, `s ∈ [0, extent_u]`, `t ∈ [0, extent_v]`.
#[derive(Debug, Clone)]
pub struct Rect {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    extent: [f64; 2],
    normal: Vector3<f64>,
    material: Material,
    pub object: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    /// Distance along the (unit) ray direction.
    pub distance: f64,
    pub color: [f64; 3],
    pub object: u32,
}

impl Rect {
    fn new(
        origin: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        extent: [f64; 2],
        material: Material,
        object: u32,
    ) -> Self {
        let u = u.normalize();
        let v = v.normalize();
        Rect {
            origin,
            u,
            v,
            extent,
            normal: u.cross(&v).normalize(),
            material,
            object,
        }
    }

    #[inline]
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let denom = d.dot(&self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.origin - o).dot(&self.normal) / denom;
        if t <= 1e-9 {
            return None;
        }
        let rel = o + d * t - self.origin;
        let s = rel.dot(&self.u);
        let r = rel.dot(&self.v);
        (s >= 0.0 && s <= self.extent[0] && r >= 0.0 && r <= self.extent[1]).then_some((t, s, r))
    }

    fn shade(&self, s: f64, r: f64) -> [f64; 3] {
        match &self.material {
            Material::Flat(c) => *c,
            Material::Textured { texture, scale } => texture_color(texture, s / scale, r / scale),
        }
    }
}

fn hash2(x: i64, y: i64, seed: u32) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (seed as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, seed: u32) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (ix, iy) = (xf as i64, yf as i64);
    let (tx, ty) = (smoothstep(x - xf), smoothstep(y - yf));
    let a = hash2(ix, iy, seed);
    let b = hash2(ix + 1, iy, seed);
    let c = hash2(ix, iy + 1, seed);
    let d = hash2(ix + 1, iy + 1, seed);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

fn mix(a: [u8; 3], b: [u8; 3], t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|i| a[i] as f64 + (b[i] as f64 - a[i] as f64) * t)
}

/// Color of `texture` at texture coordinates `(s, t)`.
pub fn texture_color(texture: &Texture, s: f64, t: f64) -> [f64; 3] {
    use std::f64::consts::PI;
    match texture {
        Texture::Solid { color } => color.map(|c| c as f64),
        Texture::Checker { a, b } => {
            let f = 0.5 + 0.5 * (3.0 * (PI * s).sin() * (PI * t).sin()).tanh();
            mix(*a, *b, f)
        }
        Texture::Noise { a, b, seed } => {
            let n = 0.65 * value_noise(s, t, *seed)
                + 0.35 * value_noise(2.0 * s + 17.3, 2.0 * t + 31.7, seed ^ 0x5bd1);
            mix(*a, *b, (n - 0.15) / 0.7)
        }
        Texture::Bricks {
            brick,
            mortar,
            seed,
        } => {
            let row_h = 0.5;
            let row = (t / row_h).floor();
            let s_off = s + if (row as i64).rem_euclid(2) == 1 {
                0.5
            } else {
                0.0
            };
            let col = s_off.floor();
            let fs = s_off - col;
            let ft = t / row_h - row;
            let edge = (fs.min(1.0 - fs) * 1.0).min(ft.min(1.0 - ft) * row_h);
            let joint = smoothstep(((edge - 0.02) / 0.05).clamp(0.0, 1.0));
            let tint = 0.85 + 0.3 * hash2(col as i64, row as i64, *seed);
            let b = brick.map(|c| (c as f64 * tint).min(255.0) as u8);
            mix(*mortar, b, joint)
        }
    }
}

fn yaw_matrix(yaw_deg: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), yaw_deg.to_radians()).into_inner()
}

fn box_rects(
    center: [f64; 3],
    half: [f64; 3],
    yaw_deg: f64,
    material: impl Fn(usize) -> Material,
    object: u32,
) -> Vec<Rect> {
    let r = yaw_matrix(yaw_deg);
    let axes = [
        r.column(0).into_owned(),
        r.column(1).into_owned(),
        r.column(2).into_owned(),
    ];
    let c = Vector3::from(center);
    let mut rects = Vec::with_capacity(6);
    for a in 0..3 {
        let (b, d) = ((a + 1) % 3, (a + 2) % 3);
        for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
            let origin = c + axes[a] * (sign * half[a]) - axes[b] * half[b] - axes[d] * half[d];
            rects.push(Rect::new(
                origin,
                axes[b],
                axes[d],
                [2.0 * half[b], 2.0 * half[d]],
                material(2 * a + k),
                object,
            ));
        }
    }
    rects
}

fn inside_box(p: &Vector3<f64>, center: [f64; 3], half: [f64; 3], yaw_deg: f64) -> bool {
    let local = yaw_matrix(yaw_deg).transpose() * (p - Vector3::from(center));
    (0..3).all(|i| local[i].abs() < half[i])
}

/// World-from-camera pose for a trajectory key.
pub fn camera_pose(key: &CameraKey) -> Pose<f64> {
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), key.yaw_deg.to_radians());
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), key.pitch_deg.to_radians());
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), key.roll_deg.to_radians());
    Pose {
        rotation: (ry * rx * rz).into_inner(),
        translation: Vector3::from(key.position),
    }
}

/// A scene compiled into rectangles for ray casting.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    statics: Vec<Rect>,
    intrinsics: Intrinsics<f64>,
}

fn occluder_rects(occ: &OccluderSpec, frame: usize, id: u32) -> Vec<Rect> {
    let key = &occ.track[frame];
    let shades = [0.75, 0.8, 1.0, 0.55, 0.9, 0.7];
    let base = occ.color.map(|c| c as f64);
    box_rects(
        key.center,
        occ.half_extent,
        key.yaw_deg,
        |face| Material::Flat(base.map(|c| c * shades[face])),
        id,
    )
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut statics = Vec::new();
        for p in &spec.planes {
            statics.push(Rect::new(
                Vector3::from(p.origin),
                Vector3::from(p.u_axis),
                Vector3::from(p.v_axis),
                p.extent,
                Material::Textured {
                    texture: p.texture.clone(),
                    scale: p.texture_scale,
                },
                BACKGROUND_ID,
            ));
        }
        for b in &spec.boxes {
            let BoxSpec {
                center,
                half_extent,
                yaw_deg,
                texture,
                texture_scale,
            } = b.clone();
            statics.extend(box_rects(
                center,
                half_extent,
                yaw_deg,
                |_| Material::Textured {
                    texture: texture.clone(),
                    scale: texture_scale,
                },
                BACKGROUND_ID,
            ));
        }
        let intrinsics = Intrinsics::from_hfov(spec.width, spec.height, spec.hfov_deg)?;
        Ok(Scene {
            spec,
            statics,
            intrinsics,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn intrinsics(&self) -> Intrinsics<f64> {
        self.intrinsics
    }

    pub fn frame_count(&self) -> usize {
        self.spec.frame_count()
    }

    /// World-from-camera pose of `frame`.
    pub fn world_from_camera(&self, frame: usize) -> Pose<f64> {
        camera_pose(&self.spec.trajectory[frame])
    }

    fn occluders(&self, frame: usize) -> Vec<Rect> {
        self.spec
            .occluders
            .iter()
            .enumerate()
            .flat_map(|(k, occ)| occluder_rects(occ, frame, k as u32 + 1))
            .collect()
    }

    fn nearest(
        rects: &[Rect],
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        best: &mut Option<(f64, usize, f64, f64)>,
        offset: usize,
    ) {
        for (i, r) in rects.iter().enumerate() {
            if let Some((t, s, q)) = r.intersect(o, d) {
                if best.is_none_or(|b| t < b.0) {
                    *best = Some((t, i + offset, s, q));
                }
            }
        }
    }

    /// First surface hit by the ray `o + t·d` (`d` unit length) at `frame`.
    pub fn cast(
        &self,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        frame: usize,
        with_occluders: bool,
    ) -> Option<Hit> {
        let occ = if with_occluders {
            self.occluders(frame)
        } else {
            Vec::new()
        };
        self.cast_with(o, d, &occ)
    }

    fn cast_with(&self, o: &Vector3<f64>, d: &Vector3<f64>, occluders: &[Rect]) -> Option<Hit> {
        let mut best = None;
        Self::nearest(&self.statics, o, d, &mut best, 0);
        Self::nearest(occluders, o, d, &mut best, self.statics.len());
        best.map(|(t, i, s, q)| {
            let rect = if i < self.statics.len() {
                &self.statics[i]
            } else {
                &occluders[i - self.statics.len()]
            };
            Hit {
                distance: t,
                color: rect.shade(s, q),
                object: rect.object,
            }
        })
    }

    fn check_camera(&self, frame: usize) -> Result<()> {
        let c = Vector3::from(self.spec.trajectory[frame].position);
        let in_static = self
            .spec
            .boxes
            .iter()
            .any(|b| inside_box(&c, b.center, b.half_extent, b.yaw_deg));
        let in_occluder = self.spec.occluders.iter().any(|o| {
            let k = &o.track[frame];
            inside_box(&c, k.center, o.half_extent, k.yaw_deg)
        });
        if in_static || in_occluder {
            return Err(Error::InvalidArgument(format!(
                "camera inside geometry at frame {frame}"
            )));
        }
        Ok(())
    }

    pub fn render_frame(&self, frame: usize) -> Result<RenderedFrame> {
        self.check_camera(frame)?;
        let spec = &self.spec;
        let k = self.intrinsics;
        let world_from_camera = self.world_from_camera(frame);
        let origin = world_from_camera.translation;
        let rot = world_from_camera.rotation;
        let occluders = self.occluders(frame);
        let exposure = spec.exposure.get(frame).copied().unwrap_or_default();
        let ss = spec.supersample;
        let offsets: Vec<f64> = (0..ss)
            .map(|a| (a as f64 + 0.5) / ss as f64 - 0.5)
            .collect();
        let sky = spec.background.map(|c| c as f64);
        let (w, h) = (spec.width, spec.height);

        struct Px {
            rgb: [u8; 3],
            gt: [u8; 3],
            masked: bool,
            depth: f64,
        }
        let expose = |c: [f64; 3]| c.map(|v| to_u8(exposure.gain * v + exposure.bias));
        let pixels: Vec<Px> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let occluders = &occluders;
                let offsets = &offsets;
                (0..w).map(move |x| {
                    let mut rgb = [0.0; 3];
                    let mut gt = [0.0; 3];
                    let mut masked = false;
                    for oy in offsets {
                        for ox in offsets {
                            let ray_cam = k.ray(x as f64 + ox, y as f64 + oy);
                            let d = (rot * ray_cam).normalize();
                            let with = self.cast_with(&origin, &d, occluders);
                            let without = self.cast_with(&origin, &d, &[]);
                            masked |= with.is_some_and(|hit| hit.object != BACKGROUND_ID);
                            let cw = with.map_or(sky, |hit| hit.color);
                            let cb = without.map_or(sky, |hit| hit.color);
                            for c in 0..3 {
                                rgb[c] += cw[c];
                                gt[c] += cb[c];
                            }
                        }
                    }
                    let n = (ss * ss) as f64;
                    let ray_cam = k.ray(x as f64, y as f64);
                    let dir_cam = ray_cam.normalize();
                    let depth = self
                        .cast_with(&origin, &(rot * dir_cam), &[])
                        .map_or(0.0, |hit| hit.distance * dir_cam.z);
                    Px {
                        rgb: expose(rgb.map(|v| v / n)),
                        gt: expose(gt.map(|v| v / n)),
                        masked,
                        depth,
                    }
                })
            })
            .collect();

        let mut image = RgbImage::new(w, h);
        let mut ground_truth = RgbImage::new(w, h);
        let mut mask = Mask::empty(w, h);
        let mut depth = DepthMap::invalid(w, h);
        for (i, px) in pixels.iter().enumerate() {
            let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
            image.put_pixel(x, y, image::Rgb(px.rgb));
            ground_truth.put_pixel(x, y, image::Rgb(px.gt));
            mask.set(x, y, px.masked);
            depth.set(x, y, px.depth);
        }

        let (cloud, object_ids) = self.lidar_sweep(frame, &world_from_camera, &occluders);
        Ok(RenderedFrame {
            image,
            ground_truth,
            mask,
            depth,
            cloud,
            object_ids,
            world_from_sensor: world_from_camera,
        })
    }

    fn lidar_sweep(
        &self,
        frame: usize,
        world_from_sensor: &Pose<f64>,
        occluders: &[Rect],
    ) -> (PointCloud<f64>, Vec<u32>) {
        let l = &self.spec.lidar;
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.spec.seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let noise = Normal::new(0.0, l.range_noise_sigma.max(0.0)).expect("valid sigma");
        let mut points = Vec::with_capacity(l.rings * l.rays_per_ring);
        let mut ids = Vec::with_capacity(l.rings * l.rays_per_ring);
        let steps = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            if n == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect()
            }
        };
        let elevations = steps(l.rings, l.vertical_fov_deg[0], l.vertical_fov_deg[1]);
        let half = 0.5 * l.horizontal_fov_deg;
        let azimuths = steps(l.rays_per_ring, -half, half);
        for e in &elevations {
            let (se, ce) = e.to_radians().sin_cos();
            for a in &azimuths {
                let (sa, ca) = a.to_radians().sin_cos();
                let dir_sensor = Vector3::new(sa * ce, -se, ca * ce);
                let d = world_from_sensor.rotation * dir_sensor;
                let hit = self.cast_with(&world_from_sensor.translation, &d, occluders);
                let n = noise.sample(&mut rng);
                let Some(hit) = hit else { continue };
                if hit.distance > l.max_range {
                    continue;
                }
                let r = (hit.distance + n).max(1e-3);
                let p = dir_sensor * r;
                points.push(p.map(|c| c as f32 as f64));
                ids.push(hit.object);
            }
        }
        (PointCloud::new(points), ids)
    }

    /// Renders every frame (in parallel; output is independent of thread count).
    pub fn render_sequence(&self) -> Result<RenderedSequence> {
        let frames = (0..self.frame_count())
            .into_par_iter()
            .map(|f| self.render_frame(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(RenderedSequence {
            intrinsics: self.intrinsics,
            frames,
        })
    }
}

/// One rendered frame. The lidar is co-located with the camera, so `cloud` is in
/// camera coordinates and `world_from_sensor` is also world-from-camera.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub image: RgbImage,
    pub ground_truth: RgbImage,
    pub mask: Mask,
    /// Ground-truth background depth at pixel centers.
    pub depth: DepthMap<f64>,
    pub cloud: PointCloud<f64>,
    pub object_ids: Vec<u32>,
    pub world_from_sensor: Pose<f64>,
}

#[derive(Debug, Clone)]
pub struct RenderedSequence {
    pub intrinsics: Intrinsics<f64>,
    pub frames: Vec<RenderedFrame>,
}

/// Renders `spec` end to end.
pub fn render_sequence(spec: &SceneSpec) -> Result<RenderedSequence> {
    Scene::new(spec.clone())?.render_sequence()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::scene::{LidarSpec, OccluderKey, PlaneSpec};

    fn plane_scene(occluder: bool) -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 48,
            hfov_deg: 60.0,
            seed: 1,
            supersample: 1,
            planes: vec![PlaneSpec {
                origin: [-20.0, -20.0, 5.0],
                u_axis: [1.0, 0.0, 0.0],
                v_axis: [0.0, 1.0, 0.0],
                extent: [40.0, 40.0],
                texture: Texture::Checker {
                    a: [40, 40, 40],
                    b: [200, 200, 200],
                },
                texture_scale: 0.5,
            }],
            boxes: vec![],
            occluders: if occluder {
                vec![OccluderSpec {
                    half_extent: [0.5, 0.4, 0.3],
                    color: [255, 0, 255],
                    track: vec![OccluderKey {
                        center: [0.3, 0.1, 2.5],
                        yaw_deg: 0.0,
                    }],
                }]
            } else {
                vec![]
            },
            trajectory: vec![CameraKey {
                position: [0.0; 3],
                yaw_deg: 0.0,
                pitch_deg: 0.0,
                roll_deg: 0.0,
            }],
            lidar: LidarSpec {
                rays_per_ring: 50,
                rings: 8,
                range_noise_sigma: 0.0,
                ..LidarSpec::default()
            },
            exposure: vec![],
            background: [0, 0, 0],
        }
    }

    #[test]
    fn no_occluders_means_image_equals_ground_truth() {
        let f = render_sequence(&plane_scene(false))
            .unwrap()
            .frames
            .remove(0);
        assert_eq!(f.image, f.ground_truth);
        assert!(f.mask.is_empty());
        assert!(f.object_ids.iter().all(|id| *id == BACKGROUND_ID));
    }

    #[test]
    fn fronto_parallel_plane_depth_is_constant() {
        let f = render_sequence(&plane_scene(false))
            .unwrap()
            .frames
            .remove(0);
        assert!(f.depth.data.iter().all(|d| (d - 5.0).abs() < 1e-9));
        // Lidar points without noise lie on the plane.
        assert!(f.cloud.points.iter().all(|p| (p.z - 5.0).abs() < 1e-5));
    }

    #[test]
    fn mask_matches_unique_occluder_color() {
        let f = render_sequence(&plane_scene(true))
            .unwrap()
            .frames
            .remove(0);
        assert!(f.mask.count() > 0);
        for (x, y, p) in f.image.enumerate_pixels() {
            // Occluder faces are shaded magenta: red == blue, green == 0.
            let magenta = p.0[1] == 0 && p.0[0] == p.0[2] && p.0[0] > 100;
            assert_eq!(magenta, f.mask.get(x, y), "pixel ({x},{y}) {:?}", p.0);
        }
        assert!(f.object_ids.contains(&1));
    }

    #[test]
    fn camera_inside_box_rejected() {
        let mut spec = plane_scene(true);
        spec.occluders[0].track[0].center = [0.0, 0.0, 0.0];
        assert!(render_sequence(&spec).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut spec = plane_scene(true);
        spec.lidar.range_noise_sigma = 0.02;
        let a = render_sequence(&spec).unwrap();
        let b = render_sequence(&spec).unwrap();
        assert_eq!(a.frames[0].image, b.frames[0].image);
        assert_eq!(a.frames[0].cloud, b.frames[0].cloud);
    }
}
