//! Frame packets, capture sequences and the on-disk dataset layout.
//!
//! ```text
//! root/
//!   intrinsics.json        fx, fy, cx, cy, width, height
//!   poses.txt              index tx ty tz qx qy qz qw   (world-from-sensor)
//!   images/000000.png      RGB frames
//!   masks/000000.png       0/255 inpainting masks
//!   clouds/000000.ply      lidar sweeps in sensor coordinates
//!   ground_truth/…png      optional occluder-free frames
//!   depth/…png             optional 16-bit depth, unit from dataset.json
//!   dataset.json           optional {"frames": n, "depth_unit_m": 0.001}
//! ```
//!
//! The lidar is taken to be co-located with the camera, so a frame's
//! camera-from-world pose is the inverse of its world-from-sensor pose.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{render_sequence, RenderedSequence, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, PointCloud, Pose};
use crate::io::{ply, png, poses};
use crate::raster::Mask;

/// Which video and frame a color came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub video: usize,
    pub frame: usize,
}

/// Per-pixel source of the synthesized color; `None` inside the mask means blank.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<Option<SourceRef>>,
}

impl ProvenanceMap {
    pub fn empty(width: u32, height: u32) -> Self {
        ProvenanceMap {
            width,
            height,
            data: vec![None; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<SourceRef> {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, s: Option<SourceRef>) {
        self.data[y as usize * self.width as usize + x as usize] = s;
    }
}

#[derive(Debug, Clone)]
pub struct FramePacket {
    pub index: usize,
    pub image: RgbImage,
    /// Camera-from-world.
    pub pose: Pose<f64>,
    pub intrinsics: Intrinsics<f64>,
    pub mask: Mask,
    /// Dense depth, filled in by the pipeline.
    pub depth: Option<DepthMap<f64>>,
    pub provenance: Option<ProvenanceMap>,
}

impl FramePacket {
    pub fn new(
        index: usize,
        image: RgbImage,
        pose: Pose<f64>,
        intrinsics: Intrinsics<f64>,
        mask: Mask,
    ) -> Result<Self> {
        let f = FramePacket {
            index,
            image,
            pose,
            intrinsics,
            mask,
            depth: None,
            provenance: None,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = (self.intrinsics.width, self.intrinsics.height);
        if self.image.dimensions() != dims {
            return Err(Error::frame(
                self.index,
                format!(
                    "image is {:?}, intrinsics say {:?}",
                    self.image.dimensions(),
                    dims
                ),
            ));
        }
        if (self.mask.width, self.mask.height) != dims {
            return Err(Error::frame(
                self.index,
                format!(
                    "mask is {}x{}, image is {:?}",
                    self.mask.width, self.mask.height, dims
                ),
            ));
        }
        if let Some(d) = &self.depth {
            if (d.width, d.height) != dims {
                return Err(Error::frame(
                    self.index,
                    "depth map size differs from image",
                ));
            }
        }
        Ok(())
    }

    /// Dense depth, or an error naming the frame when it has not been computed.
    pub fn dense_depth(&self) -> Result<&DepthMap<f64>> {
        self.depth
            .as_ref()
            .ok_or_else(|| Error::frame(self.index, "dense depth not available"))
    }
}

/// Metadata stored in `dataset.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub frames: usize,
    #[serde(default = "default_depth_unit")]
    pub depth_unit_m: f64,
}

fn default_depth_unit() -> f64 {
    0.001
}

/// One video: frames, raw lidar sweeps and their world-from-sensor poses.
#[derive(Debug, Clone)]
pub struct CaptureSequence {
    pub intrinsics: Intrinsics<f64>,
    pub frames: Vec<FramePacket>,
    /// Sensor-frame clouds, one per frame.
    pub clouds: Vec<PointCloud<f64>>,
    pub world_from_sensor: Vec<Pose<f64>>,
    pub ground_truth: Option<Vec<RgbImage>>,
}

impl CaptureSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clouds.len() != self.frames.len()
            || self.world_from_sensor.len() != self.frames.len()
        {
            return Err(Error::Data(format!(
                "{} frames, {} clouds, {} poses",
                self.frames.len(),
                self.clouds.len(),
                self.world_from_sensor.len()
            )));
        }
        for w in self.frames.windows(2) {
            if w[1].index <= w[0].index {
                return Err(Error::frame(
                    w[1].index,
                    "frame indices must be strictly increasing",
                ));
            }
        }
        for f in &self.frames {
            f.validate()?;
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != self.frames.len() {
                return Err(Error::Data(format!(
                    "{} ground-truth frames for {} frames",
                    gt.len(),
                    self.frames.len()
                )));
            }
        }
        Ok(())
    }

    /// Replaces frame `i`'s world-from-sensor pose and updates its camera pose to match.
    pub fn set_world_from_sensor(&mut self, i: usize, pose: Pose<f64>) {
        self.world_from_sensor[i] = pose;
        self.frames[i].pose = pose.inverse();
    }

    /// Converts a rendered synthetic sequence.
    pub fn from_rendered(r: &RenderedSequence) -> Result<Self> {
        let mut frames = Vec::with_capacity(r.frames.len());
        for (i, f) in r.frames.iter().enumerate() {
            frames.push(FramePacket::new(
                i,
                f.image.clone(),
                f.world_from_sensor.inverse(),
                r.intrinsics,
                f.mask.clone(),
            )?);
        }
        Ok(CaptureSequence {
            intrinsics: r.intrinsics,
            frames,
            clouds: r.frames.iter().map(|f| f.cloud.clone()).collect(),
            world_from_sensor: r.frames.iter().map(|f| f.world_from_sensor).collect(),
            ground_truth: Some(r.frames.iter().map(|f| f.ground_truth.clone()).collect()),
        })
    }
}

pub fn frame_file(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{index:06}.{ext}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Frame indices of the `%06d.<ext>` files in `dir`, sorted.
fn list_indices(dir: &Path, ext: &str) -> Result<Vec<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        match stem.parse::<usize>() {
            Ok(i) if stem.len() == 6 => out.push(i),
            _ => {
                return Err(Error::Data(format!(
                    "unexpected file name {}",
                    path.display()
                )))
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics<f64>> {
    let k: Intrinsics<f64> = read_json(path)?;
    k.validate()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(k)
}

pub fn read_dataset_info(root: &Path) -> Result<Option<DatasetInfo>> {
    let path = root.join("dataset.json");
    if path.exists() {
        Ok(Some(read_json(&path)?))
    } else {
        Ok(None)
    }
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<CaptureSequence> {
    let intrinsics = read_intrinsics(&root.join("intrinsics.json"))?;
    let indices = list_indices(&root.join("images"), "png")?;
    if indices.is_empty() {
        return Err(Error::Data(format!(
            "{}: no frames in images/",
            root.display()
        )));
    }
    let info = read_dataset_info(root)?;
    if let Some(info) = info {
        if info.frames != indices.len() {
            return Err(Error::Data(format!(
                "dataset.json declares {} frames, images/ has {}",
                info.frames,
                indices.len()
            )));
        }
    }
    for (dir, ext) in [("masks", "png"), ("clouds", "ply")] {
        for extra in list_indices(&root.join(dir), ext)? {
            if indices.binary_search(&extra).is_err() {
                return Err(Error::frame(
                    extra,
                    format!("{dir}/ has a file with no matching image"),
                ));
            }
        }
    }
    let pose_list = poses::read_poses(&root.join("poses.txt"))?;
    let mut pose_map = BTreeMap::new();
    for (i, p) in pose_list {
        if pose_map.insert(i, p).is_some() {
            return Err(Error::frame(i, "duplicate pose"));
        }
    }
    if let Some(extra) = pose_map.keys().find(|i| indices.binary_search(i).is_err()) {
        return Err(Error::frame(*extra, "pose given for a frame with no image"));
    }
    let gt_dir = root.join("ground_truth");
    let has_gt = gt_dir.is_dir();

    type Loaded = (FramePacket, PointCloud<f64>, Pose<f64>, Option<RgbImage>);
    let loaded: Vec<Loaded> = indices
        .par_iter()
        .map(|&i| -> Result<Loaded> {
            let with_frame = |e: Error| match e {
                Error::Frame { .. } => e,
                other => Error::frame(i, other.to_string()),
            };
            let need = |p: PathBuf| {
                if p.exists() {
                    Ok(p)
                } else {
                    Err(Error::frame(i, format!("missing {}", p.display())))
                }
            };
            let image =
                png::read_rgb(&frame_file(&root.join("images"), i, "png")).map_err(with_frame)?;
            let mask = png::read_mask(&need(frame_file(&root.join("masks"), i, "png"))?)
                .map_err(with_frame)?;
            let cloud = ply::read_ply(&need(frame_file(&root.join("clouds"), i, "ply"))?)
                .map_err(with_frame)?;
            let pose = *pose_map
                .get(&i)
                .ok_or_else(|| Error::frame(i, "no pose in poses.txt"))?;
            let gt = if has_gt {
                let img =
                    png::read_rgb(&need(frame_file(&gt_dir, i, "png"))?).map_err(with_frame)?;
                if img.dimensions() != image.dimensions() {
                    return Err(Error::frame(i, "ground-truth size differs from image"));
                }
                Some(img)
            } else {
                None
            };
            let frame = FramePacket::new(i, image, pose.inverse(), intrinsics, mask)?;
            Ok((frame, cloud, pose, gt))
        })
        .collect::<Result<_>>()?;

    let mut seq = CaptureSequence {
        intrinsics,
        frames: Vec::with_capacity(loaded.len()),
        clouds: Vec::with_capacity(loaded.len()),
        world_from_sensor: Vec::with_capacity(loaded.len()),
        ground_truth: has_gt.then(Vec::new),
    };
    for (frame, cloud, pose, gt) in loaded {
        seq.frames.push(frame);
        seq.clouds.push(cloud);
        seq.world_from_sensor.push(pose);
        if let (Some(v), Some(g)) = (seq.ground_truth.as_mut(), gt) {
            v.push(g);
        }
    }
    seq.validate()?;
    Ok(seq)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `seq` in the dataset layout, plus optional depth maps (millimeter PNGs).
pub fn write_dataset(
    root: &Path,
    seq: &CaptureSequence,
    depth: Option<&[DepthMap<f64>]>,
) -> Result<()> {
    seq.validate()?;
    let info = DatasetInfo {
        frames: seq.len(),
        depth_unit_m: default_depth_unit(),
    };
    for dir in ["images", "masks", "clouds"] {
        create_dir(&root.join(dir))?;
    }
    if seq.ground_truth.is_some() {
        create_dir(&root.join("ground_truth"))?;
    }
    if depth.is_some() {
        create_dir(&root.join("depth"))?;
    }
    write_json(&root.join("intrinsics.json"), &seq.intrinsics)?;
    write_json(&root.join("dataset.json"), &info)?;
    let poses: Vec<_> = seq
        .frames
        .iter()
        .map(|f| f.index)
        .zip(seq.world_from_sensor.iter().copied())
        .collect();
    poses::write_poses(&root.join("poses.txt"), &poses)?;
    (0..seq.len())
        .into_par_iter()
        .try_for_each(|k| -> Result<()> {
            let f = &seq.frames[k];
            png::write_rgb(&frame_file(&root.join("images"), f.index, "png"), &f.image)?;
            png::write_mask(&frame_file(&root.join("masks"), f.index, "png"), &f.mask)?;
            ply::write_ply(
                &frame_file(&root.join("clouds"), f.index, "ply"),
                &seq.clouds[k],
                ply::PlyFormat::BinaryLittleEndian,
            )?;
            if let Some(gt) = &seq.ground_truth {
                png::write_rgb(
                    &frame_file(&root.join("ground_truth"), f.index, "png"),
                    &gt[k],
                )?;
            }
            if let Some(d) = depth {
                png::write_depth(
                    &frame_file(&root.join("depth"), f.index, "png"),
                    &d[k],
                    info.depth_unit_m,
                )?;
            }
            Ok(())
        })
}

/// Renders `spec` and writes it as a dataset (with ground truth, depth and the
/// scene description in `scene.json`).
pub fn generate_dataset(spec: &SceneSpec, root: &Path) -> Result<CaptureSequence> {
    let rendered = render_sequence(spec)?;
    let seq = CaptureSequence::from_rendered(&rendered)?;
    let depth: Vec<_> = rendered.frames.iter().map(|f| f.depth.clone()).collect();
    write_dataset(root, &seq, Some(&depth))?;
    write_json(&root.join("scene.json"), spec)?;
    Ok(seq)
}

/// Reads `%06d.png` frames for the given indices from `dir`.
pub fn read_frames(dir: &Path, indices: &[usize]) -> Result<Vec<RgbImage>> {
    indices
        .par_iter()
        .map(|&i| {
            let p = frame_file(dir, i, "png");
            if !p.exists() {
                return Err(Error::frame(i, format!("missing {}", p.display())));
            }
            png::read_rgb(&p)
        })
        .collect()
}
