//! PNG helpers for color frames, masks and 16-bit depth.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::raster::Mask;

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| image_err(path, e))
}

/// Reads a mask PNG, rejecting anything but 0/255 gray values.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let gray: GrayImage = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => other.to_luma8(),
    };
    Mask::from_gray(&gray)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    mask.to_gray().save(path).map_err(|e| image_err(path, e))
}

/// 16-bit depth PNG; a pixel value of `n` means `n * unit_m` meters and 0 is invalid.
pub fn write_depth(path: &Path, depth: &DepthMap<f64>, unit_m: f64) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(depth.width, depth.height, |x, y| {
            let d = depth.get(x, y).map_or(0.0, |d| (d / unit_m).round());
            Luma([d.clamp(0.0, u16::MAX as f64) as u16])
        });
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn read_depth(path: &Path, unit_m: f64) -> Result<DepthMap<f64>> {
    let img = image::open(path)
        .map_err(|e| image_err(path, e))?
        .to_luma16();
    Ok(DepthMap {
        width: img.width(),
        height: img.height(),
        data: img.pixels().map(|p| p.0[0] as f64 * unit_m).collect(),
    })
}
