//! Gradient-domain blending of synthesized colors into the target frame.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ProvenanceMap;
use crate::error::{Error, Result};
use crate::raster::{pixel_rgb, to_u8, Mask, Rgb};
use crate::sampling::NEIGHBORS;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoissonConfig {
    pub enabled: bool,
    /// Relative residual at which conjugate gradients stops.
    pub tol: f64,
    /// Iteration cap as a multiple of the number of unknowns.
    pub max_iter_factor: usize,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        PoissonConfig {
            enabled: true,
            tol: 1e-8,
            max_iter_factor: 10,
        }
    }
}

/// Desired forward differences `c(x+1, y) − c(x, y)` and `c(x, y+1) − c(x, y)`
/// for every pixel, plus the colors they were taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceField<T> {
    pub width: u32,
    pub height: u32,
    pub gx: Vec<Rgb<T>>,
    pub gy: Vec<Rgb<T>>,
    pub mask: Mask,
    pub provenance: ProvenanceMap,
    /// Colors inside the mask, used as the solver's starting point.
    pub colors: Vec<Rgb<T>>,
}

impl<T: Real> GuidanceField<T> {
    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Desired `f(p) − f(q)` for 4-neighbors `p`, `q` (side index as in [`NEIGHBORS`]).
    #[inline]
    fn desired(&self, x: u32, y: u32, side: usize, c: usize) -> T {
        match side {
            0 => self.gx[self.idx(x - 1, y)][c],
            1 => -self.gx[self.idx(x, y)][c],
            2 => self.gy[self.idx(x, y - 1)][c],
            _ => -self.gy[self.idx(x, y)][c],
        }
    }
}

/// Guidance from the composite `colors`: plain forward differences between mask
/// pixels taken from the same source, zero across provenance seams, at blank
/// pixels and (until [`add_boundary_guidance`]) between mask and non-mask pixels.
pub fn build_guidance_field<T: Real>(
    colors: &RgbImage,
    provenance: &ProvenanceMap,
    mask: &Mask,
) -> GuidanceField<T> {
    let (w, h) = colors.dimensions();
    let n = w as usize * h as usize;
    let mut gx = vec![[T::zero(); 3]; n];
    let mut gy = vec![[T::zero(); 3]; n];
    let same = |a: (u32, u32), b: (u32, u32)| {
        mask.get(a.0, a.1)
            && mask.get(b.0, b.1)
            && provenance.get(a.0, a.1).is_some()
            && provenance.get(a.0, a.1) == provenance.get(b.0, b.1)
    };
    for y in 0..h {
        for x in 0..w {
            let i = y as usize * w as usize + x as usize;
            let c = pixel_rgb::<T>(colors, x, y);
            if x + 1 < w && same((x, y), (x + 1, y)) {
                let d = pixel_rgb::<T>(colors, x + 1, y);
                gx[i] = [d[0] - c[0], d[1] - c[1], d[2] - c[2]];
            }
            if y + 1 < h && same((x, y), (x, y + 1)) {
                let d = pixel_rgb::<T>(colors, x, y + 1);
                gy[i] = [d[0] - c[0], d[1] - c[1], d[2] - c[2]];
            }
        }
    }
    let colors = mask
        .pixels()
        .map(|(x, y)| pixel_rgb::<T>(colors, x, y))
        .collect();
    GuidanceField {
        width: w,
        height: h,
        gx,
        gy,
        mask: mask.clone(),
        provenance: provenance.clone(),
        colors,
    }
}

/// What the source frame of a mask pixel predicts for its unmasked 4-neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPrediction<T> {
    pub x: u32,
    pub y: u32,
    /// The pixel's own synthesized color.
    pub color: Rgb<T>,
    /// Predicted left, right, top and bottom neighbor colors, read from the same source.
    pub neighbors: [Option<Rgb<T>>; 4],
}

/// Sets the guidance between mask pixels and their unmasked neighbors to the
/// difference seen in the pixel's own source frame. Pairs without a prediction
/// keep a zero gradient, so the boundary color is simply pulled in.
pub fn add_boundary_guidance<T: Real>(
    field: &mut GuidanceField<T>,
    predictions: &[BoundaryPrediction<T>],
) {
    let (w, h) = (field.width as i64, field.height as i64);
    for p in predictions {
        if !field.mask.get(p.x, p.y) || field.provenance.get(p.x, p.y).is_none() {
            continue;
        }
        for (side, (dx, dy)) in NEIGHBORS.iter().enumerate() {
            let (qx, qy) = (p.x as i64 + dx, p.y as i64 + dy);
            if qx < 0 || qy < 0 || qx >= w || qy >= h || field.mask.get(qx as u32, qy as u32) {
                continue;
            }
            let Some(q) = p.neighbors[side] else { continue };
            // Forward difference stored at the left/top pixel of the pair.
            let (at, forward) = match side {
                0 => (
                    field.idx(qx as u32, qy as u32),
                    [0, 1, 2].map(|c| p.color[c] - q[c]),
                ),
                1 => (field.idx(p.x, p.y), [0, 1, 2].map(|c| q[c] - p.color[c])),
                2 => (
                    field.idx(qx as u32, qy as u32),
                    [0, 1, 2].map(|c| p.color[c] - q[c]),
                ),
                _ => (field.idx(p.x, p.y), [0, 1, 2].map(|c| q[c] - p.color[c])),
            };
            if side < 2 {
                field.gx[at] = forward;
            } else {
                field.gy[at] = forward;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution<T> {
    /// Mask pixels in row-major order.
    pub pixels: Vec<(u32, u32)>,
    /// Unclamped solution per mask pixel.
    pub colors: Vec<Rgb<T>>,
    /// Largest final relative residual over the channels.
    pub residual: T,
    /// Largest iteration count over the channels.
    pub iterations: usize,
    /// Mask pixels on the image border, where the missing neighbor is reflected
    /// (zero normal derivative) instead of supplying a boundary color.
    pub reflected_pixels: usize,
}

impl<T: Real> PoissonSolution<T> {
    /// `image` with the mask pixels replaced by the clamped, rounded solution.
    pub fn apply(&self, image: &RgbImage) -> RgbImage {
        let mut out = image.clone();
        for (&(x, y), c) in self.pixels.iter().zip(&self.colors) {
            out.put_pixel(x, y, image::Rgb(c.map(|v| to_u8(v.f64()))));
        }
        out
    }
}

struct System {
    /// In-mask neighbor indices per side.
    nbr: Vec<[Option<usize>; 4]>,
    /// Number of in-image neighbors.
    degree: Vec<u8>,
}

impl System {
    fn apply<T: Real>(&self, x: &[T], out: &mut [T]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut s = T::from_usize_lossy(self.degree[i] as usize) * x[i];
            for j in self.nbr[i].iter().flatten() {
                s -= x[*j];
            }
            *o = s;
        });
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

/// Conjugate gradients on the SPD system; returns (iterations, relative residual).
fn conjugate_gradient<T: Real>(
    sys: &System,
    b: &[T],
    x: &mut [T],
    tol: T,
    max_iter: usize,
) -> (usize, T) {
    let n = b.len();
    let mut ax = vec![T::zero(); n];
    sys.apply(x, &mut ax);
    let mut r: Vec<T> = b.iter().zip(&ax).map(|(b, a)| *b - *a).collect();
    let bnorm = dot(b, b).sqrt();
    let denom = if bnorm > T::zero() { bnorm } else { T::one() };
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![T::zero(); n];
    let mut it = 0;
    while it < max_iter && rr.sqrt() / denom >= tol {
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        it += 1;
    }
    // Report the true residual rather than the recursively updated one.
    sys.apply(x, &mut ax);
    let res = b
        .iter()
        .zip(&ax)
        .fold(T::zero(), |s, (b, a)| s + (*b - *a) * (*b - *a))
        .sqrt();
    (it, res / denom)
}

/// Solves the discrete guided Poisson equation over the mask, per channel,
/// with Dirichlet values from `image` around the mask.
pub fn solve_poisson<T: Real>(
    field: &GuidanceField<T>,
    image: &RgbImage,
    config: &PoissonConfig,
) -> Result<PoissonSolution<T>> {
    let (w, h) = (field.width, field.height);
    if image.dimensions() != (w, h) {
        return Err(Error::InvalidArgument(
            "image and guidance sizes differ".into(),
        ));
    }
    let pixels: Vec<(u32, u32)> = field.mask.pixels().collect();
    let n = pixels.len();
    if n == 0 {
        return Ok(PoissonSolution {
            pixels,
            colors: Vec::new(),
            residual: T::zero(),
            iterations: 0,
            reflected_pixels: 0,
        });
    }
    let mut index = vec![usize::MAX; w as usize * h as usize];
    for (i, &(x, y)) in pixels.iter().enumerate() {
        index[y as usize * w as usize + x as usize] = i;
    }
    let mut nbr = vec![[None; 4]; n];
    let mut degree = vec![0u8; n];
    let mut rhs = vec![[T::zero(); 3]; n];
    let mut anchored = vec![false; n];
    let mut reflected = 0;
    for (i, &(x, y)) in pixels.iter().enumerate() {
        let mut on_border = false;
        for (side, (dx, dy)) in NEIGHBORS.iter().enumerate() {
            let (qx, qy) = (x as i64 + dx, y as i64 + dy);
            if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                on_border = true;
                continue;
            }
            degree[i] += 1;
            let (qx, qy) = (qx as u32, qy as u32);
            for c in 0..3 {
                rhs[i][c] += field.desired(x, y, side, c);
            }
            let j = index[qy as usize * w as usize + qx as usize];
            if j == usize::MAX {
                anchored[i] = true;
                let f = pixel_rgb::<T>(image, qx, qy);
                for c in 0..3 {
                    rhs[i][c] += f[c];
                }
            } else {
                nbr[i][side] = Some(j);
            }
        }
        reflected += on_border as usize;
    }
    // Every connected piece of the mask needs at least one boundary color.
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut ok = false;
        while let Some(i) = stack.pop() {
            ok |= anchored[i];
            for j in nbr[i].iter().flatten() {
                if !seen[*j] {
                    seen[*j] = true;
                    stack.push(*j);
                }
            }
        }
        if !ok {
            return Err(Error::Numerical(format!(
                "mask region containing pixel {:?} has no known boundary color",
                pixels[start]
            )));
        }
    }
    let sys = System { nbr, degree };
    let tol = T::lit(config.tol);
    let max_iter = config.max_iter_factor.saturating_mul(n).max(1);
    let solved: Vec<(Vec<T>, usize, T)> = (0..3)
        .into_par_iter()
        .map(|c| {
            let b: Vec<T> = rhs.iter().map(|r| r[c]).collect();
            let mut x: Vec<T> = field.colors.iter().map(|v| v[c]).collect();
            let (it, res) = conjugate_gradient(&sys, &b, &mut x, tol, max_iter);
            (x, it, res)
        })
        .collect();
    let floor = T::lit(config.tol).max(T::default_epsilon() * T::lit(1e3));
    let mut residual = T::zero();
    let mut iterations = 0;
    for (x, it, res) in &solved {
        if !res.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "Poisson solve produced non-finite values".into(),
            ));
        }
        if *res > floor {
            return Err(Error::Numerical(format!(
                "Poisson solve stalled at relative residual {:?} after {it} iterations",
                res
            )));
        }
        residual = residual.max(*res);
        iterations = iterations.max(*it);
    }
    let colors = (0..n)
        .map(|i| [solved[0].0[i], solved[1].0[i], solved[2].0[i]])
        .collect();
    Ok(PoissonSolution {
        pixels,
        colors,
        residual,
        iterations,
        reflected_pixels: reflected,
    })
}

/// Discrete Laplacian residual `A f − b` at each mask pixel for channel `c`
/// (useful for checking a solution independently of the solver).
pub fn laplacian_residual<T: Real>(
    field: &GuidanceField<T>,
    image: &RgbImage,
    sol: &PoissonSolution<T>,
    c: usize,
) -> Vec<T> {
    let (w, h) = (field.width as i64, field.height as i64);
    let mut value = std::collections::HashMap::new();
    for (p, v) in sol.pixels.iter().zip(&sol.colors) {
        value.insert(*p, v[c]);
    }
    sol.pixels
        .iter()
        .map(|&(x, y)| {
            let fp = value[&(x, y)];
            let mut r = T::zero();
            for (side, (dx, dy)) in NEIGHBORS.iter().enumerate() {
                let (qx, qy) = (x as i64 + dx, y as i64 + dy);
                if qx < 0 || qy < 0 || qx >= w || qy >= h {
                    continue;
                }
                let q = (qx as u32, qy as u32);
                let fq = value
                    .get(&q)
                    .copied()
                    .unwrap_or_else(|| pixel_rgb::<T>(image, q.0, q.1)[c]);
                r += fp - fq - field.desired(x, y, side, c);
            }
            r
        })
        .collect()
}
