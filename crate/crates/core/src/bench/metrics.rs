//! Masked-region image quality metrics: MAE, RMSE, PSNR and SSIM.

use image::RgbImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::Mask;

const SSIM_RADIUS: i64 = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// Decibels; `f64::INFINITY` when the images agree exactly (serialized as `"inf"`).
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr: f64,
    pub ssim: f64,
    /// Number of masked pixels the averages run over.
    pub pixels: usize,
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Raw::Str(s) => Err(serde::de::Error::custom(format!("bad psnr value {s:?}"))),
    }
}

/// PSNR for a given mean squared error; infinite at zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

fn check_dims(a: &RgbImage, b: &RgbImage, m: &Mask) -> Result<()> {
    if a.dimensions() != b.dimensions() || a.dimensions() != (m.width, m.height) {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {:?} vs {:?} vs mask {}x{}",
            a.dimensions(),
            b.dimensions(),
            m.width,
            m.height
        )));
    }
    Ok(())
}

fn gaussian_window() -> Vec<f64> {
    let n = (2 * SSIM_RADIUS + 1) as usize;
    let mut w = Vec::with_capacity(n * n);
    for dy in -SSIM_RADIUS..=SSIM_RADIUS {
        for dx in -SSIM_RADIUS..=SSIM_RADIUS {
            w.push((-((dx * dx + dy * dy) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    w
}

/// Channel-averaged SSIM of the window centered at `(x, y)`. The window is
/// truncated at image borders and its weights renormalized.
pub fn ssim_at(a: &RgbImage, b: &RgbImage, x: u32, y: u32) -> f64 {
    thread_local! {
        static WINDOW: Vec<f64> = gaussian_window();
    }
    WINDOW.with(|win| ssim_at_with(a, b, x, y, win))
}

fn ssim_at_with(a: &RgbImage, b: &RgbImage, x: u32, y: u32, win: &[f64]) -> f64 {
    let (w, h) = (a.width() as i64, a.height() as i64);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let n = 2 * SSIM_RADIUS + 1;
    let mut total = 0.0;
    for c in 0..3 {
        let (mut sw, mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for dy in -SSIM_RADIUS..=SSIM_RADIUS {
            let yy = y as i64 + dy;
            if yy < 0 || yy >= h {
                continue;
            }
            for dx in -SSIM_RADIUS..=SSIM_RADIUS {
                let xx = x as i64 + dx;
                if xx < 0 || xx >= w {
                    continue;
                }
                let g = win[((dy + SSIM_RADIUS) * n + dx + SSIM_RADIUS) as usize];
                let va = a.get_pixel(xx as u32, yy as u32).0[c] as f64;
                let vb = b.get_pixel(xx as u32, yy as u32).0[c] as f64;
                sw += g;
                ma += g * va;
                mb += g * vb;
                saa += g * va * va;
                sbb += g * vb * vb;
                sab += g * va * vb;
            }
        }
        let (ma, mb) = (ma / sw, mb / sw);
        let va = (saa / sw - ma * ma).max(0.0);
        let vb = (sbb / sw - mb * mb).max(0.0);
        let cov = sab / sw - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / 3.0
}

/// Metrics over the masked pixels of every frame, pooled.
pub fn evaluate(
    results: &[RgbImage],
    ground_truth: &[RgbImage],
    masks: &[Mask],
) -> Result<MetricsReport> {
    if results.len() != ground_truth.len() || results.len() != masks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} results, {} ground-truth frames, {} masks",
            results.len(),
            ground_truth.len(),
            masks.len()
        )));
    }
    let win = gaussian_window();
    let (mut abs, mut sq, mut ssim) = (0.0, 0.0, 0.0);
    let mut pixels = 0usize;
    for ((a, b), m) in results.iter().zip(ground_truth).zip(masks) {
        check_dims(a, b, m)?;
        for (x, y) in m.pixels() {
            let (pa, pb) = (a.get_pixel(x, y).0, b.get_pixel(x, y).0);
            for c in 0..3 {
                let d = pa[c] as f64 - pb[c] as f64;
                abs += d.abs();
                sq += d * d;
            }
            ssim += ssim_at_with(a, b, x, y, &win);
            pixels += 1;
        }
    }
    if pixels == 0 {
        return Err(Error::InvalidArgument(
            "empty mask: nothing to evaluate".into(),
        ));
    }
    let samples = 3.0 * pixels as f64;
    let mse = sq / samples;
    Ok(MetricsReport {
        mae: abs / samples,
        rmse: mse.sqrt(),
        psnr: psnr_from_mse(mse),
        ssim: ssim / pixels as f64,
        pixels,
    })
}

/// Single-frame convenience wrapper.
pub fn evaluate_frame(
    result: &RgbImage,
    ground_truth: &RgbImage,
    mask: &Mask,
) -> Result<MetricsReport> {
    evaluate(
        std::slice::from_ref(result),
        std::slice::from_ref(ground_truth),
        std::slice::from_ref(mask),
    )
}

/// Aligned plain-text table, columns MAE, RMSE, PSNR, SSIM.
pub fn format_table(rows: &[(&str, MetricsReport)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = format!(
        "{:<name_w$}  {:>8}  {:>8}  {:>8}  {:>6}\n",
        "Method", "MAE", "RMSE", "PSNR", "SSIM"
    );
    for (name, r) in rows {
        let psnr = if r.psnr.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.3}", r.psnr)
        };
        out.push_str(&format!(
            "{:<name_w$}  {:>8.3}  {:>8.3}  {:>8}  {:>6.3}\n",
            name, r.mae, r.rmse, psnr, r.ssim
        ));
    }
    out
}
