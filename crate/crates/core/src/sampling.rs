//! Depth-guided candidate color sampling and BP label spaces.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FramePacket, SourceRef};
use crate::error::{Error, Result};
use crate::geometry::{project_point, unproject_pixel};
use crate::raster::{sample_rgb_unmasked, Mask, Rgb};

/// Left, right, top, bottom.
pub const NEIGHBORS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Side of the label window (odd).
    pub window_n: usize,
    pub depth_tol_m: f64,
    pub depth_tol_rel: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            window_n: 3,
            depth_tol_m: 0.05,
            depth_tol_rel: 0.02,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_n == 0 || self.window_n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "sample.window_n must be odd and positive, got {}",
                self.window_n
            )));
        }
        if !(self.depth_tol_m >= 0.0 && self.depth_tol_rel >= 0.0) {
            return Err(Error::Config(
                "depth tolerances must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn tolerance(&self, depth: f64) -> f64 {
        self.depth_tol_m.max(self.depth_tol_rel * depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpStatus {
    Ok,
    InvalidDepth,
    BehindCamera,
    OutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub u: f64,
    pub v: f64,
    /// Camera depth of the warped point in the source frame.
    pub z: f64,
    pub status: WarpStatus,
}

impl Warp {
    fn failed(status: WarpStatus) -> Self {
        Warp {
            u: f64::NAN,
            v: f64::NAN,
            z: f64::NAN,
            status,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == WarpStatus::Ok
    }
}

/// Moves target pixel `(x, y)` into `source` through the target's dense depth.
pub fn warp_pixel(target: &FramePacket, x: u32, y: u32, source: &FramePacket) -> Warp {
    let Some(depth) = target.depth.as_ref().and_then(|d| d.get(x, y)) else {
        return Warp::failed(WarpStatus::InvalidDepth);
    };
    let Ok(world) = unproject_pixel(x as f64, y as f64, depth, &target.pose, &target.intrinsics)
    else {
        return Warp::failed(WarpStatus::InvalidDepth);
    };
    let Some(q) = project_point(&world, &source.pose, &source.intrinsics) else {
        return Warp::failed(WarpStatus::BehindCamera);
    };
    let k = &source.intrinsics;
    let in_bounds =
        q.u >= 0.0 && q.v >= 0.0 && q.u <= (k.width - 1) as f64 && q.v <= (k.height - 1) as f64;
    Warp {
        u: q.u,
        v: q.v,
        z: q.z,
        status: if in_bounds {
            WarpStatus::Ok
        } else {
            WarpStatus::OutOfBounds
        },
    }
}

/// A frame that may supply colors.
#[derive(Debug, Clone, Copy)]
pub struct Source<'a> {
    pub id: SourceRef,
    pub frame: &'a FramePacket,
}

/// Sources for target frame `t` of `video` in scan order: later frames of the
/// same video (nearest first), then earlier ones (nearest first), then the
/// frames of every other video ordered by camera-center distance.
pub fn scan_order<'a>(videos: &'a [Vec<FramePacket>], video: usize, t: usize) -> Vec<Source<'a>> {
    let own = &videos[video];
    let mut out: Vec<Source> = Vec::new();
    let src = |v: usize, f: usize| Source {
        id: SourceRef {
            video: v,
            frame: videos[v][f].index,
        },
        frame: &videos[v][f],
    };
    out.extend((t + 1..own.len()).map(|s| src(video, s)));
    out.extend((0..t).rev().map(|s| src(video, s)));
    let center = own[t].pose.center();
    let mut others: Vec<(f64, usize, usize)> = Vec::new();
    for (v, frames) in videos.iter().enumerate() {
        if v == video {
            continue;
        }
        for (f, frame) in frames.iter().enumerate() {
            others.push(((frame.pose.center() - center).norm(), v, f));
        }
    }
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    out.extend(others.into_iter().map(|(_, v, f)| src(v, f)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSample {
    /// Source frame and its position in the scan list; `None` for an invalid sample.
    pub source: Option<(usize, SourceRef)>,
    pub u: f64,
    pub v: f64,
    pub color: Rgb<f64>,
    pub depth: f64,
}

impl CandidateSample {
    pub const INVALID: CandidateSample = CandidateSample {
        source: None,
        u: f64::NAN,
        v: f64::NAN,
        color: [0.0; 3],
        depth: f64::NAN,
    };

    pub fn is_valid(&self) -> bool {
        self.source.is_some()
    }
}

/// First source in `sources` where pixel `(x, y)` warps in-bounds onto unmasked
/// pixels and agrees with the source's own depth.
pub fn sample_candidate(
    target: &FramePacket,
    x: u32,
    y: u32,
    sources: &[Source],
    config: &SampleConfig,
) -> CandidateSample {
    for (slot, s) in sources.iter().enumerate() {
        let w = warp_pixel(target, x, y, s.frame);
        match w.status {
            WarpStatus::Ok => {}
            WarpStatus::InvalidDepth => return CandidateSample::INVALID,
            _ => continue,
        }
        let Some(src_depth) = s.frame.depth.as_ref().and_then(|d| d.sample(w.u, w.v)) else {
            continue;
        };
        if (w.z - src_depth).abs() > config.tolerance(w.z) {
            continue;
        }
        let Some(color) = sample_rgb_unmasked(&s.frame.image, &s.frame.mask, w.u, w.v) else {
            continue;
        };
        return CandidateSample {
            source: Some((slot, s.id)),
            u: w.u,
            v: w.v,
            color,
            depth: w.z,
        };
    }
    CandidateSample::INVALID
}

/// Candidates for every masked pixel of `target`, in row-major mask order.
pub fn sample_all(
    target: &FramePacket,
    sources: &[Source],
    config: &SampleConfig,
) -> Vec<((u32, u32), CandidateSample)> {
    let pixels: Vec<(u32, u32)> = target.mask.pixels().collect();
    pixels
        .par_iter()
        .map(|&(x, y)| ((x, y), sample_candidate(target, x, y, sources, config)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    /// Integer offset from the candidate position in the source image.
    pub offset: (i32, i32),
    pub color: Rgb<f64>,
    /// Color this label predicts at the left, right, top and bottom neighbors.
    pub expected: [Option<Rgb<f64>>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelLabels {
    pub x: u32,
    pub y: u32,
    pub source: Option<SourceRef>,
    /// Empty when the candidate is invalid.
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    pub width: u32,
    pub height: u32,
    pub window_n: usize,
    /// One entry per masked pixel, row-major.
    pub pixels: Vec<PixelLabels>,
}

/// Window offsets with the center first, then row-major.
pub fn window_offsets(n: usize) -> Vec<(i32, i32)> {
    let r = (n / 2) as i32;
    let mut v = vec![(0, 0)];
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx, dy) != (0, 0) {
                v.push((dx, dy));
            }
        }
    }
    v
}

fn pixel_labels(
    target: &FramePacket,
    x: u32,
    y: u32,
    cand: &CandidateSample,
    sources: &[Source],
    n: usize,
) -> PixelLabels {
    let Some((slot, id)) = cand.source else {
        return PixelLabels {
            x,
            y,
            source: None,
            labels: Vec::new(),
        };
    };
    let src = sources[slot].frame;
    let (w, h) = (
        target.intrinsics.width as i64,
        target.intrinsics.height as i64,
    );
    let neighbor_warps: [Option<Warp>; 4] = NEIGHBORS.map(|(dx, dy)| {
        let (qx, qy) = (x as i64 + dx, y as i64 + dy);
        if qx < 0 || qy < 0 || qx >= w || qy >= h {
            return None;
        }
        let wq = warp_pixel(target, qx as u32, qy as u32, src);
        // Out-of-bounds warps may come back in range once the label offset is added.
        matches!(wq.status, WarpStatus::Ok | WarpStatus::OutOfBounds).then_some(wq)
    });
    let labels = window_offsets(n)
        .into_iter()
        .filter_map(|(dx, dy)| {
            let color = sample_rgb_unmasked(
                &src.image,
                &src.mask,
                cand.u + dx as f64,
                cand.v + dy as f64,
            )?;
            let expected = neighbor_warps.map(|wq| {
                wq.and_then(|wq| {
                    sample_rgb_unmasked(&src.image, &src.mask, wq.u + dx as f64, wq.v + dy as f64)
                })
            });
            Some(Label {
                offset: (dx, dy),
                color,
                expected,
            })
        })
        .collect();
    PixelLabels {
        x,
        y,
        source: Some(id),
        labels,
    }
}

/// Label windows and expected neighbor colors for every masked pixel.
pub fn build_label_space(
    target: &FramePacket,
    candidates: &[((u32, u32), CandidateSample)],
    sources: &[Source],
    window_n: usize,
) -> LabelSpace {
    let pixels = candidates
        .par_iter()
        .map(|&((x, y), ref c)| pixel_labels(target, x, y, c, sources, window_n))
        .collect();
    LabelSpace {
        width: target.intrinsics.width,
        height: target.intrinsics.height,
        window_n,
        pixels,
    }
}

/// Composite of `image` with each non-blank masked pixel set to its label
/// `choice(i)`; blank pixels are painted `blank`.
pub fn composite(
    image: &RgbImage,
    space: &LabelSpace,
    mut choice: impl FnMut(usize) -> usize,
    blank: [u8; 3],
) -> RgbImage {
    let mut out = image.clone();
    for (i, p) in space.pixels.iter().enumerate() {
        let c = if p.labels.is_empty() {
            blank
        } else {
            p.labels[choice(i)].color.map(crate::raster::to_u8)
        };
        out.put_pixel(p.x, p.y, image::Rgb(c));
    }
    out
}

/// Pixels of `mask` whose candidate was invalid.
pub fn blank_mask(space: &LabelSpace) -> Mask {
    let mut m = Mask::empty(space.width, space.height);
    for p in &space.pixels {
        if p.labels.is_empty() {
            m.set(p.x, p.y, true);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DepthMap, Intrinsics, Pose};
    use nalgebra::Vector3;

    fn plane_frame(index: usize, z_cam: f64, masked: &[(u32, u32)], seed: u8) -> FramePacket {
        let k = Intrinsics::new(40.0, 40.0, 15.5, 11.5, 32, 24).unwrap();
        let img = RgbImage::from_fn(32, 24, |x, y| {
            image::Rgb([(x * 7) as u8 ^ seed, (y * 9) as u8, 100])
        });
        let mut mask = Mask::empty(32, 24);
        for &(x, y) in masked {
            mask.set(x, y, true);
        }
        // Camera at z = -z_cam looking at the plane z = 0 of the world.
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, z_cam));
        let mut f = FramePacket::new(index, img, pose, k, mask).unwrap();
        f.depth = Some(DepthMap {
            width: 32,
            height: 24,
            data: vec![z_cam; 32 * 24],
        });
        f
    }

    #[test]
    fn identity_warp() {
        let f = plane_frame(0, 5.0, &[], 0);
        let w = warp_pixel(&f, 7, 9, &f);
        assert!(w.ok());
        assert!((w.u - 7.0).abs() < 1e-9 && (w.v - 9.0).abs() < 1e-9 && (w.z - 5.0).abs() < 1e-9);
    }

    #[test]
    fn moving_closer_magnifies() {
        let far = plane_frame(0, 6.0, &[], 0);
        let near = plane_frame(1, 4.0, &[], 0);
        let w = warp_pixel(&far, 25, 20, &near);
        let c = (far.intrinsics.cx, far.intrinsics.cy);
        assert!((w.u - c.0).hypot(w.v - c.1) > (25.0 - c.0).hypot(20.0 - c.1));
    }

    #[test]
    fn forward_first_then_backward() {
        let p = (10, 10);
        let frames: Vec<FramePacket> = vec![
            plane_frame(0, 5.0, &[], 0),
            plane_frame(1, 5.0, &[], 1),
            plane_frame(2, 5.0, &[p], 2),
            plane_frame(
                3,
                5.0,
                &[
                    (9, 9),
                    (10, 9),
                    (9, 10),
                    (10, 10),
                    (11, 10),
                    (10, 11),
                    (11, 11),
                    (9, 11),
                    (11, 9),
                ],
                3,
            ),
            plane_frame(4, 5.0, &[], 4),
        ];
        let videos = vec![frames];
        let cfg = SampleConfig::default();
        let target = &videos[0][2];
        let sources = scan_order(&videos, 0, 2);
        let s = sample_candidate(target, p.0, p.1, &sources, &cfg);
        assert_eq!(
            s.source.unwrap().1.frame,
            4,
            "frame 3 is masked at p, frame 4 is the first valid forward frame"
        );
        // Mask p in every forward frame: fall back to the nearest earlier frame.
        let mut v2 = videos.clone();
        v2[0][4].mask.set(p.0, p.1, true);
        let sources = scan_order(&v2, 0, 2);
        assert_eq!(
            sample_candidate(&v2[0][2], p.0, p.1, &sources, &cfg)
                .source
                .unwrap()
                .1
                .frame,
            1
        );
        // Masked everywhere: invalid.
        for f in &mut v2[0] {
            f.mask.set(p.0, p.1, true);
        }
        let sources = scan_order(&v2, 0, 2);
        assert!(!sample_candidate(&v2[0][2], p.0, p.1, &sources, &cfg).is_valid());
    }

    #[test]
    fn occlusion_check_skips_inconsistent_depth() {
        let target = plane_frame(0, 5.0, &[(4, 4)], 0);
        let mut occluded = plane_frame(1, 5.0, &[], 1);
        occluded
            .depth
            .as_mut()
            .unwrap()
            .data
            .iter_mut()
            .for_each(|d| *d = 3.0);
        let clear = plane_frame(2, 5.0, &[], 2);
        let videos = vec![vec![target, occluded, clear]];
        let sources = scan_order(&videos, 0, 0);
        let s = sample_candidate(&videos[0][0], 4, 4, &sources, &SampleConfig::default());
        assert_eq!(s.source.unwrap().1.frame, 2);
    }

    #[test]
    fn label_window_clipped_at_corner() {
        let target = plane_frame(0, 5.0, &[(0, 0)], 0);
        let source = plane_frame(1, 5.0, &[], 1);
        let videos = vec![vec![target, source]];
        let sources = scan_order(&videos, 0, 0);
        let cands = sample_all(&videos[0][0], &sources, &SampleConfig::default());
        let space = build_label_space(&videos[0][0], &cands, &sources, 3);
        let labels = &space.pixels[0].labels;
        assert_eq!(labels.len(), 4);
        assert_eq!(labels[0].offset, (0, 0));
        // Neighbors outside the image have no expectation.
        assert!(labels[0].expected[0].is_none() && labels[0].expected[2].is_none());
        assert!(labels[0].expected[1].is_some());
    }

    #[test]
    fn window_of_one_is_the_candidate() {
        let target = plane_frame(0, 5.0, &[(5, 5)], 0);
        let source = plane_frame(1, 5.0, &[], 1);
        let videos = vec![vec![target, source]];
        let sources = scan_order(&videos, 0, 0);
        let cands = sample_all(&videos[0][0], &sources, &SampleConfig::default());
        let space = build_label_space(&videos[0][0], &cands, &sources, 1);
        let l = &space.pixels[0].labels;
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].color, cands[0].1.color);
        let right = videos[0][1].image.get_pixel(6, 5).0.map(|c| c as f64);
        assert_eq!(l[0].expected[1], Some(right));
    }

    #[test]
    fn other_videos_sorted_by_distance() {
        let a = vec![plane_frame(0, 5.0, &[], 0), plane_frame(1, 5.0, &[], 0)];
        let mut far = plane_frame(0, 9.0, &[], 0);
        far.pose.translation.x = 3.0;
        let near = plane_frame(1, 5.5, &[], 0);
        let videos = vec![a, vec![far, near]];
        let order: Vec<SourceRef> = scan_order(&videos, 0, 0).iter().map(|s| s.id).collect();
        assert_eq!(
            order,
            vec![
                SourceRef { video: 0, frame: 1 },
                SourceRef { video: 1, frame: 1 },
                SourceRef { video: 1, frame: 0 }
            ]
        );
    }
}
