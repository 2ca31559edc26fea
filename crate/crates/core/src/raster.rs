//! Image-space helpers: binary masks and subpixel color sampling.

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Rgb<T> = [T; 3];

/// Binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            data: vec![true; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[self.index(x, y)]
    }

    /// Out-of-bounds coordinates read as unmasked.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.width as i64
            && y < self.height as i64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|m| *m)
    }

    /// Masked pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(move |(i, _)| ((i % w as usize) as u32, (i / w as usize) as u32))
    }

    /// Chebyshev (square) dilation by `radius` pixels.
    pub fn dilate(&self, radius: u32) -> Mask {
        let (w, h) = (self.width as usize, self.height as usize);
        let r = radius as usize;
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if self.data[y * w + x] {
                    let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
                    rows[y * w + lo..=y * w + hi]
                        .iter_mut()
                        .for_each(|v| *v = true);
                }
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if rows[y * w + x] {
                    for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                        out[yy * w + x] = true;
                    }
                }
            }
        }
        Mask {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    /// Pixels set in `self` but not in `other`.
    pub fn minus(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && !*b)
                .collect(),
        }
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    /// Parses an 8-bit mask image: 0 is unmasked, 255 is masked, anything else is rejected.
    pub fn from_gray(img: &GrayImage) -> Result<Self> {
        let mut data = Vec::with_capacity(img.len());
        for (x, y, p) in img.enumerate_pixels() {
            match p.0[0] {
                0 => data.push(false),
                255 => data.push(true),
                v => {
                    return Err(Error::Data(format!(
                        "non-binary mask value {v} at ({x}, {y})"
                    )))
                }
            }
        }
        Ok(Mask {
            width: img.width(),
            height: img.height(),
            data,
        })
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }
}

#[inline]
pub fn pixel_rgb<T: Real>(img: &RgbImage, x: u32, y: u32) -> Rgb<T> {
    let p = img.get_pixel(x, y).0;
    [
        T::lit(p[0] as f64),
        T::lit(p[1] as f64),
        T::lit(p[2] as f64),
    ]
}

/// Integer pixels and weights of the bilinear stencil at `(u, v)`, or `None`
/// outside `[0, w-1] × [0, h-1]`. Zero-weight taps are omitted.
#[inline]
pub fn bilinear_taps<T: Real>(
    u: T,
    v: T,
    width: u32,
    height: u32,
) -> Option<([(u32, u32, T); 4], usize)> {
    let max_u = T::from_usize_lossy(width as usize - 1);
    let max_v = T::from_usize_lossy(height as usize - 1);
    if !(u >= T::zero() && v >= T::zero() && u <= max_u && v <= max_v) {
        return None;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let x0 = x0.f64() as u32;
    let y0 = y0.f64() as u32;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let one = T::one();
    let cand = [
        (x0, y0, (one - fx) * (one - fy)),
        (x1, y0, fx * (one - fy)),
        (x0, y1, (one - fx) * fy),
        (x1, y1, fx * fy),
    ];
    let mut taps = [(0u32, 0u32, T::zero()); 4];
    let mut n = 0;
    for c in cand {
        if c.2 > T::zero() {
            taps[n] = c;
            n += 1;
        }
    }
    Some((taps, n))
}

/// Bilinear RGB sample at subpixel coordinates.
pub fn sample_rgb<T: Real>(img: &RgbImage, u: T, v: T) -> Option<Rgb<T>> {
    let (taps, n) = bilinear_taps(u, v, img.width(), img.height())?;
    let mut acc = [T::zero(); 3];
    for &(x, y, w) in &taps[..n] {
        let p = img.get_pixel(x, y).0;
        for c in 0..3 {
            acc[c] += w * T::lit(p[c] as f64);
        }
    }
    Some(acc)
}

/// Bilinear RGB sample that fails if any contributing tap is masked.
pub fn sample_rgb_unmasked<T: Real>(img: &RgbImage, mask: &Mask, u: T, v: T) -> Option<Rgb<T>> {
    let (taps, n) = bilinear_taps(u, v, img.width(), img.height())?;
    let mut acc = [T::zero(); 3];
    for &(x, y, w) in &taps[..n] {
        if mask.get(x, y) {
            return None;
        }
        let p = img.get_pixel(x, y).0;
        for c in 0..3 {
            acc[c] += w * T::lit(p[c] as f64);
        }
    }
    Some(acc)
}

/// L1 distance summed over RGB channels.
#[inline]
pub fn l1<T: Real>(a: &Rgb<T>, b: &Rgb<T>) -> T {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

#[inline]
pub fn to_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_and_ring() {
        let mut m = Mask::empty(7, 7);
        m.set(3, 3, true);
        let d = m.dilate(1);
        assert_eq!(d.count(), 9);
        assert_eq!(d.minus(&m).count(), 8);
        assert!(d.get(2, 2) && d.get(4, 4) && !d.get(1, 3));
    }

    #[test]
    fn non_binary_mask_rejected() {
        let mut img = GrayImage::new(2, 2);
        img.put_pixel(1, 0, Luma([128]));
        assert!(Mask::from_gray(&img).is_err());
        img.put_pixel(1, 0, Luma([255]));
        assert_eq!(Mask::from_gray(&img).unwrap().count(), 1);
    }

    #[test]
    fn bilinear_midpoint() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, image::Rgb([100, 50, 0]));
        let c: Rgb<f64> = sample_rgb(&img, 0.5, 0.0).unwrap();
        assert_eq!(c, [50.0, 25.0, 0.0]);
        assert!(sample_rgb::<f64>(&img, 1.01, 0.0).is_none());
        let c: Rgb<f64> = sample_rgb(&img, 1.0, 0.0).unwrap();
        assert_eq!(c, [100.0, 50.0, 0.0]);
    }

    #[test]
    fn masked_taps_reject_sample() {
        let img = RgbImage::new(3, 3);
        let mut m = Mask::empty(3, 3);
        m.set(1, 1, true);
        assert!(sample_rgb_unmasked::<f64>(&img, &m, 0.5, 0.5).is_none());
        assert!(sample_rgb_unmasked::<f64>(&img, &m, 0.0, 0.5).is_some());
        assert!(sample_rgb_unmasked::<f64>(&img, &m, 2.0, 2.0).is_some());
    }
}
