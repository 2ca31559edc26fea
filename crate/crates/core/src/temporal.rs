//! Flicker reduction: average each inpainted pixel with its flow-traced
//! positions in neighboring result frames.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::frame_file;
use crate::error::{Error, Result};
use crate::io::flo::{read_flo, FloImage};
use crate::raster::{bilinear_taps, sample_rgb, to_u8, Mask};

const LEVELS: usize = 3;
const BLOCK: usize = 8;
const SEARCH: i64 = 4;
/// Cost per squared pixel of departure from the coarser estimate; keeps
/// repetitive texture from snapping to a neighboring period.
const MOTION_PENALTY: f64 = 2.0;
/// Flow magnitudes above this in a `.flo` file mark unknown flow.
const FLO_UNKNOWN: f32 = 1e9;

/// Per-pixel displacement from frame `a` into frame `b`, with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f32; 2]>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        FlowField {
            width,
            height,
            data: vec![[0.0; 2]; n],
            valid: vec![true; n],
        }
    }

    pub fn from_flo(f: &FloImage) -> Self {
        let valid = f
            .data
            .iter()
            .map(|[u, v]| {
                u.is_finite() && v.is_finite() && u.abs() < FLO_UNKNOWN && v.abs() < FLO_UNKNOWN
            })
            .collect();
        FlowField {
            width: f.width,
            height: f.height,
            data: f.data.clone(),
            valid,
        }
    }

    pub fn to_flo(&self) -> FloImage {
        let data = self
            .data
            .iter()
            .zip(&self.valid)
            .map(|(d, v)| if *v { *d } else { [1e10, 1e10] })
            .collect();
        FloImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Bilinear flow at a subpixel position; `None` if any contributing pixel is invalid.
    pub fn lookup(&self, u: f64, v: f64) -> Option<[f64; 2]> {
        let (taps, n) = bilinear_taps(u, v, self.width, self.height)?;
        let mut acc = [0.0; 2];
        for &(x, y, w) in &taps[..n] {
            let i = y as usize * self.width as usize + x as usize;
            if !self.valid[i] {
                return None;
            }
            acc[0] += w * self.data[i][0] as f64;
            acc[1] += w * self.data[i][1] as f64;
        }
        Some(acc)
    }
}

#[derive(Clone)]
struct Gray {
    w: usize,
    h: usize,
    px: Vec<f32>,
}

impl Gray {
    fn from_rgb(img: &RgbImage) -> Self {
        let px = img
            .pixels()
            .map(|p| 0.299 * p.0[0] as f32 + 0.587 * p.0[1] as f32 + 0.114 * p.0[2] as f32)
            .collect();
        Gray {
            w: img.width() as usize,
            h: img.height() as usize,
            px,
        }
    }

    fn half(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * x, 2 * y)
                    + self.at(2 * x + 1, 2 * y)
                    + self.at(2 * x, 2 * y + 1)
                    + self.at(2 * x + 1, 2 * y + 1);
                px.push(0.25 * s);
            }
        }
        Gray { w, h, px }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.px[y * self.w + x]
    }
}

/// Block motion at one pyramid level: flow at block centers plus validity.
struct BlockFlow {
    nx: usize,
    ny: usize,
    flow: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl BlockFlow {
    /// Bilinear interpolation between block centers at pixel `(x, y)`.
    fn dense_at(&self, x: f64, y: f64) -> ([f64; 2], bool) {
        let gx = ((x + 0.5) / BLOCK as f64 - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let gy = ((y + 0.5) / BLOCK as f64 - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.nx - 1), (y0 + 1).min(self.ny - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let mut acc = [0.0; 2];
        let mut ok = true;
        for (bx, by, w) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            if w <= 0.0 {
                continue;
            }
            let i = by * self.nx + bx;
            acc[0] += w * self.flow[i][0];
            acc[1] += w * self.flow[i][1];
            ok &= self.valid[i];
        }
        (acc, ok)
    }
}

fn match_blocks(a: &Gray, b: &Gray, coarse: Option<&BlockFlow>) -> BlockFlow {
    let nx = a.w.div_ceil(BLOCK).max(1);
    let ny = a.h.div_ceil(BLOCK).max(1);
    let results: Vec<([f64; 2], bool)> = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let (bx, by) = (k % nx, k / nx);
            let (x0, y0) = (bx * BLOCK, by * BLOCK);
            let (x1, y1) = ((x0 + BLOCK).min(a.w), (y0 + BLOCK).min(a.h));
            let center = (0.5 * (x0 + x1) as f64 - 0.5, 0.5 * (y0 + y1) as f64 - 0.5);
            let init = coarse.map_or([0.0; 2], |c| {
                let (f, _) = c.dense_at(0.5 * center.0 - 0.25, 0.5 * center.1 - 0.25);
                [2.0 * f[0], 2.0 * f[1]]
            });
            let (ix, iy) = (init[0].round() as i64, init[1].round() as i64);
            let npx = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = (y0..y1)
                .flat_map(|y| (x0..x1).map(move |x| (x, y)))
                .map(|(x, y)| a.at(x, y) as f64)
                .sum::<f64>()
                / npx;
            let var = (y0..y1)
                .flat_map(|y| (x0..x1).map(move |x| (x, y)))
                .map(|(x, y)| (a.at(x, y) as f64 - mean).powi(2))
                .sum::<f64>()
                / npx;
            let side = (2 * SEARCH + 1) as usize;
            let mut ssd = vec![f64::INFINITY; side * side];
            for sy in -SEARCH..=SEARCH {
                for sx in -SEARCH..=SEARCH {
                    let (dx, dy) = (ix + sx, iy + sy);
                    let (mut s, mut n) = (0.0, 0usize);
                    for y in y0..y1 {
                        let yy = y as i64 + dy;
                        if yy < 0 || yy >= b.h as i64 {
                            continue;
                        }
                        for x in x0..x1 {
                            let xx = x as i64 + dx;
                            if xx < 0 || xx >= b.w as i64 {
                                continue;
                            }
                            let d = a.at(x, y) as f64 - b.at(xx as usize, yy as usize) as f64;
                            s += d * d;
                            n += 1;
                        }
                    }
                    if n as f64 >= 0.5 * npx {
                        ssd[((sy + SEARCH) as usize) * side + (sx + SEARCH) as usize] =
                            s / n as f64;
                    }
                }
            }
            let mut best: Option<(f64, i64, i64)> = None;
            for sy in -SEARCH..=SEARCH {
                for sx in -SEARCH..=SEARCH {
                    let v = ssd[((sy + SEARCH) as usize) * side + (sx + SEARCH) as usize]
                        + MOTION_PENALTY * (sx * sx + sy * sy) as f64;
                    let better = match best {
                        None => v.is_finite(),
                        Some((bv, bx, by)) => {
                            v < bv || (v == bv && sx * sx + sy * sy < bx * bx + by * by)
                        }
                    };
                    if better {
                        best = Some((v, sx, sy));
                    }
                }
            }
            let Some((_, sx, sy)) = best else {
                return (init, false);
            };
            let bv = ssd[((sy + SEARCH) as usize) * side + (sx + SEARCH) as usize];
            let at = |x: i64, y: i64| -> Option<f64> {
                if x.abs() > SEARCH || y.abs() > SEARCH {
                    return None;
                }
                let v = ssd[((y + SEARCH) as usize) * side + (x + SEARCH) as usize];
                v.is_finite().then_some(v)
            };
            let sub = |m: Option<f64>, p: Option<f64>| -> f64 {
                match (m, p) {
                    (Some(m), Some(p)) => {
                        let den = m - 2.0 * bv + p;
                        if den > 1e-12 {
                            (0.5 * (m - p) / den).clamp(-0.5, 0.5)
                        } else {
                            0.0
                        }
                    }
                    _ => 0.0,
                }
            };
            let fx = (ix + sx) as f64 + sub(at(sx - 1, sy), at(sx + 1, sy));
            let fy = (iy + sy) as f64 + sub(at(sx, sy - 1), at(sx, sy + 1));
            if bv == 0.0 {
                return ([(ix + sx) as f64, (iy + sy) as f64], true);
            }
            let valid = bv <= (0.5 * var).max(25.0);
            ([fx, fy], valid)
        })
        .collect();
    BlockFlow {
        nx,
        ny,
        flow: results.iter().map(|r| r.0).collect(),
        valid: results.iter().map(|r| r.1).collect(),
    }
}

/// Coarse-to-fine block matching (3 levels, 8×8 blocks, ±4 px search per level,
/// parabolic subpixel refinement). Poorly matched blocks are invalid, as are
/// pixels whose target falls outside the image.
pub fn compute_flow(a: &RgbImage, b: &RgbImage) -> Result<FlowField> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::InvalidArgument(format!(
            "flow between {:?} and {:?} images",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let mut pa = vec![Gray::from_rgb(a)];
    let mut pb = vec![Gray::from_rgb(b)];
    while pa.len() < LEVELS
        && pa.last().unwrap().w >= 2 * BLOCK
        && pa.last().unwrap().h >= 2 * BLOCK
    {
        let (na, nb) = (pa.last().unwrap().half(), pb.last().unwrap().half());
        pa.push(na);
        pb.push(nb);
    }
    let mut coarse: Option<BlockFlow> = None;
    for level in (0..pa.len()).rev() {
        coarse = Some(match_blocks(&pa[level], &pb[level], coarse.as_ref()));
    }
    let blocks = coarse.expect("at least one level");
    let (w, h) = a.dimensions();
    let mut out = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (f, ok) = blocks.dense_at(x as f64, y as f64);
            let i = y as usize * w as usize + x as usize;
            out.data[i] = [f[0] as f32, f[1] as f32];
            let (tx, ty) = (x as f64 + f[0], y as f64 + f[1]);
            out.valid[i] =
                ok && tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f64 && ty <= (h - 1) as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    pub enabled: bool,
    /// Frames traced on each side.
    pub radius: usize,
    /// Samples (own color included) needed before a pixel is replaced.
    pub min_samples: usize,
    /// Directory with `forward/%06d.flo` (frame t to t+1) and
    /// `backward/%06d.flo` (frame t to t-1); computed flow is used when absent.
    pub flow_dir: Option<PathBuf>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            enabled: true,
            radius: 2,
            min_samples: 2,
            flow_dir: None,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 || self.min_samples < 1 || self.min_samples > 2 * self.radius + 1 {
            return Err(Error::Config(format!(
                "temporal.radius must be >= 1 and 1 <= min_samples <= 2*radius+1 (got {} / {})",
                self.radius, self.min_samples
            )));
        }
        Ok(())
    }
}

/// Forward (t to t+1) and backward (t+1 to t) flows between consecutive frames.
pub fn consecutive_flows(frames: &[RgbImage]) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    let pairs: Vec<(FlowField, FlowField)> = (0..frames.len().saturating_sub(1))
        .into_par_iter()
        .map(|t| {
            Ok((
                compute_flow(&frames[t], &frames[t + 1])?,
                compute_flow(&frames[t + 1], &frames[t])?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Reads precomputed flows for frames `indices` from `dir` (layout in [`SmoothingConfig::flow_dir`]).
pub fn load_flows(dir: &Path, indices: &[usize]) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for w in indices.windows(2) {
        fwd.push(FlowField::from_flo(&read_flo(&frame_file(
            &dir.join("forward"),
            w[0],
            "flo",
        ))?));
        bwd.push(FlowField::from_flo(&read_flo(&frame_file(
            &dir.join("backward"),
            w[1],
            "flo",
        ))?));
    }
    Ok((fwd, bwd))
}

fn trace(
    frames: &[RgbImage],
    flows: &[FlowField],
    start: (f64, f64),
    steps: impl Iterator<Item = (usize, usize)>,
    out: &mut Vec<[f64; 3]>,
) {
    let mut pos = start;
    for (flow_idx, frame_idx) in steps {
        let Some(f) = flows[flow_idx].lookup(pos.0, pos.1) else {
            return;
        };
        pos = (pos.0 + f[0], pos.1 + f[1]);
        let Some(c) = sample_rgb::<f64>(&frames[frame_idx], pos.0, pos.1) else {
            return;
        };
        out.push(c);
    }
}

/// Replaces each masked pixel with the mean of its own color and the colors
/// traced through up to `radius` frames on either side.
pub fn temporal_smooth(
    frames: &[RgbImage],
    masks: &[Mask],
    forward: &[FlowField],
    backward: &[FlowField],
    config: &SmoothingConfig,
) -> Result<Vec<RgbImage>> {
    config.validate()?;
    let n = frames.len();
    if masks.len() != n || forward.len() + 1 != n.max(1) || backward.len() != forward.len() {
        return Err(Error::InvalidArgument(format!(
            "{n} frames, {} masks, {} forward and {} backward flows",
            masks.len(),
            forward.len(),
            backward.len()
        )));
    }
    let r = config.radius;
    Ok((0..n)
        .into_par_iter()
        .map(|t| {
            let mut out = frames[t].clone();
            for (x, y) in masks[t].pixels() {
                let own = frames[t].get_pixel(x, y).0.map(|c| c as f64);
                let mut samples = vec![own];
                let p = (x as f64, y as f64);
                trace(
                    frames,
                    forward,
                    p,
                    (1..=r)
                        .take_while(|k| t + k < n)
                        .map(|k| (t + k - 1, t + k)),
                    &mut samples,
                );
                trace(
                    frames,
                    backward,
                    p,
                    (1..=r).take_while(|k| *k <= t).map(|k| (t - k, t - k)),
                    &mut samples,
                );
                if samples.len() >= config.min_samples {
                    let m = samples.len() as f64;
                    let mean = [0, 1, 2].map(|c| samples.iter().map(|s| s[c]).sum::<f64>() / m);
                    out.put_pixel(x, y, image::Rgb(mean.map(to_u8)));
                }
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Smooth random blobs on a 6 px lattice, shifted right by `shift`.
    fn texture(w: u32, h: u32, shift: i64) -> RgbImage {
        let hash = |i: i64, j: i64| {
            (((i * 73_856_093) ^ (j * 19_349_663)).rem_euclid(1000) as f64) / 1000.0
        };
        RgbImage::from_fn(w, h, |x, y| {
            let (gx, gy) = ((x as i64 - shift) as f64 / 6.0, y as f64 / 6.0);
            let (i, j) = (gx.floor() as i64, gy.floor() as i64);
            let (fx, fy) = (gx - i as f64, gy - j as f64);
            let n = hash(i, j) * (1.0 - fx) * (1.0 - fy)
                + hash(i + 1, j) * fx * (1.0 - fy)
                + hash(i, j + 1) * (1.0 - fx) * fy
                + hash(i + 1, j + 1) * fx * fy;
            let v = (30.0 + 200.0 * n) as u8;
            image::Rgb([v, v / 2 + 40, 255 - v])
        })
    }

    #[test]
    fn identical_images_give_zero_flow() {
        let a = texture(64, 48, 0);
        let f = compute_flow(&a, &a).unwrap();
        assert_eq!(f.valid_count(), f.valid.len());
        assert!(f.data.iter().all(|d| d[0] == 0.0 && d[1] == 0.0));
    }

    #[test]
    fn one_pixel_shift() {
        let a = texture(96, 64, 0);
        let b = texture(96, 64, 1);
        let f = compute_flow(&a, &b).unwrap();
        let good = f
            .data
            .iter()
            .zip(&f.valid)
            .filter(|(_, v)| **v)
            .filter(|(d, _)| (d[0] - 1.0).abs() < 0.5 && d[1].abs() < 0.5)
            .count();
        assert!(f.valid_count() > 0);
        assert!(
            good as f64 >= 0.9 * f.valid_count() as f64,
            "{good} of {}",
            f.valid_count()
        );
    }

    #[test]
    fn mismatched_content_is_invalid() {
        let a = texture(48, 48, 0);
        let b = RgbImage::from_fn(48, 48, |x, y| {
            if (x / 2 + y / 3) % 2 == 0 {
                image::Rgb([0, 255, 0])
            } else {
                image::Rgb([255, 0, 255])
            }
        });
        let f = compute_flow(&a, &b).unwrap();
        assert!(f.valid_count() < f.valid.len() / 4, "{}", f.valid_count());
    }

    #[test]
    fn brightened_frame_moves_a_third() {
        let base = RgbImage::from_pixel(8, 8, image::Rgb([100, 100, 100]));
        let mut bright = base.clone();
        let mut mask = Mask::empty(8, 8);
        for y in 2..5 {
            for x in 2..5 {
                bright.put_pixel(x, y, image::Rgb([130, 130, 130]));
                mask.set(x, y, true);
            }
        }
        let frames = vec![base.clone(), bright, base];
        let masks = vec![Mask::empty(8, 8), mask, Mask::empty(8, 8)];
        let z = vec![FlowField::zeros(8, 8), FlowField::zeros(8, 8)];
        let cfg = SmoothingConfig {
            radius: 1,
            min_samples: 1,
            ..Default::default()
        };
        let out = temporal_smooth(&frames, &masks, &z, &z, &cfg).unwrap();
        assert_eq!(out[1].get_pixel(3, 3).0, [110, 110, 110]);
        assert_eq!(out[1].get_pixel(0, 0).0, [100, 100, 100]);
        assert_eq!(out[0], frames[0]);
    }

    #[test]
    fn invalid_flow_is_identity() {
        let frames: Vec<RgbImage> = (0..4).map(|i| texture(16, 16, i)).collect();
        let masks = vec![Mask::full(16, 16); 4];
        let mut bad = FlowField::zeros(16, 16);
        bad.valid.iter_mut().for_each(|v| *v = false);
        let flows = vec![bad; 3];
        let out =
            temporal_smooth(&frames, &masks, &flows, &flows, &SmoothingConfig::default()).unwrap();
        assert_eq!(out, frames);
    }

    #[test]
    fn flo_round_trip_keeps_validity() {
        let mut f = FlowField::zeros(3, 2);
        f.data[1] = [0.5, -2.0];
        f.valid[4] = false;
        assert_eq!(FlowField::from_flo(&f.to_flo()).valid, f.valid);
    }

    #[test]
    fn config_bounds() {
        assert!(SmoothingConfig {
            radius: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SmoothingConfig {
            radius: 1,
            min_samples: 4,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
