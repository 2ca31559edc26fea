//! Pairwise MRF over masked pixels: label costs from boundary agreement and
//! neighbor consistency, solved with min-sum loopy belief propagation.

use std::collections::HashMap;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ProvenanceMap, SourceRef};
use crate::error::{Error, Result};
use crate::raster::{l1, pixel_rgb, Mask, Rgb};
use crate::sampling::{LabelSpace, NEIGHBORS};
use crate::scalar::Real;

/// Index of the opposite side in [`NEIGHBORS`] order (left, right, top, bottom).
pub const OPPOSITE: [usize; 4] = [1, 0, 3, 2];

/// Largest number of labelings the exhaustive solver will enumerate.
pub const EXHAUSTIVE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpConfig {
    pub enabled: bool,
    pub iterations: usize,
    pub alpha: f64,
    /// Message damping in [0, 1); 0 is plain synchronous min-sum.
    pub damping: f64,
    /// ICM sweeps applied to the BP labeling (0 disables polishing).
    pub icm_sweeps: usize,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            enabled: true,
            iterations: 30,
            alpha: 10.0,
            damping: 0.5,
            icm_sweeps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelData<T> {
    pub color: Rgb<T>,
    /// Predicted colors at the left, right, top and bottom neighbors.
    pub expected: [Option<Rgb<T>>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrfProblem<T> {
    pub pixels: Vec<(u32, u32)>,
    pub labels: Vec<Vec<LabelData<T>>>,
    /// Known colors of neighbors outside the mask, per side.
    pub boundary: Vec<[Option<Rgb<T>>; 4]>,
    /// Neighbors that are themselves in the problem, per side.
    pub neighbors: Vec<[Option<usize>; 4]>,
    pub alpha: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeling<T> {
    pub labels: Vec<usize>,
    pub energy: T,
}

impl<T: Real> MrfProblem<T> {
    /// Builds a problem from explicit pixels; adjacency is derived from coordinates.
    pub fn new(
        pixels: Vec<(u32, u32)>,
        labels: Vec<Vec<LabelData<T>>>,
        boundary: Vec<[Option<Rgb<T>>; 4]>,
        alpha: T,
    ) -> Result<Self> {
        if labels.len() != pixels.len() || boundary.len() != pixels.len() {
            return Err(Error::InvalidArgument(
                "pixels, labels and boundary lengths differ".into(),
            ));
        }
        if let Some(i) = labels.iter().position(|l| l.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "pixel {:?} has no labels",
                pixels[i]
            )));
        }
        let index: HashMap<(u32, u32), usize> =
            pixels.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        if index.len() != pixels.len() {
            return Err(Error::InvalidArgument("duplicate pixels".into()));
        }
        let neighbors = pixels
            .iter()
            .map(|&(x, y)| {
                NEIGHBORS.map(|(dx, dy)| {
                    let (qx, qy) = (x as i64 + dx, y as i64 + dy);
                    if qx < 0 || qy < 0 {
                        return None;
                    }
                    index.get(&(qx as u32, qy as u32)).copied()
                })
            })
            .collect();
        Ok(MrfProblem {
            pixels,
            labels,
            boundary,
            neighbors,
            alpha,
        })
    }

    /// Problem over the masked pixels of `space` that have labels; `image`
    /// supplies the colors of unmasked neighbors.
    pub fn from_label_space(
        space: &LabelSpace,
        image: &RgbImage,
        mask: &Mask,
        alpha: T,
    ) -> Result<Self> {
        let (w, h) = (space.width as i64, space.height as i64);
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        let mut boundary = Vec::new();
        for p in space.pixels.iter().filter(|p| !p.labels.is_empty()) {
            pixels.push((p.x, p.y));
            labels.push(
                p.labels
                    .iter()
                    .map(|l| LabelData {
                        color: l.color.map(T::lit),
                        expected: l.expected.map(|e| e.map(|c| c.map(T::lit))),
                    })
                    .collect(),
            );
            boundary.push(NEIGHBORS.map(|(dx, dy)| {
                let (qx, qy) = (p.x as i64 + dx, p.y as i64 + dy);
                (qx >= 0 && qy >= 0 && qx < w && qy < h && !mask.get(qx as u32, qy as u32))
                    .then(|| pixel_rgb::<T>(image, qx as u32, qy as u32))
            }));
        }
        Self::new(pixels, labels, boundary, alpha)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Boundary agreement summed over the sides with a known neighbor; `alpha`
    /// for pixels with none.
    pub fn data_cost(&self, p: usize, l: usize) -> T {
        let label = &self.labels[p][l];
        let mut any = false;
        let mut cost = T::zero();
        for side in 0..4 {
            if let Some(known) = &self.boundary[p][side] {
                any = true;
                if let Some(e) = &label.expected[side] {
                    cost += l1(e, known);
                }
            }
        }
        if any {
            cost
        } else {
            self.alpha
        }
    }

    /// Consistency between `p` (label `lp`) and its neighbor on `side` (label `lq`):
    /// p's prediction of q against q's color, plus q's prediction of p against p's color.
    pub fn discontinuity_cost(&self, p: usize, side: usize, lp: usize, lq: usize) -> T {
        let q = self.neighbors[p][side].expect("side must lead to a problem pixel");
        let (a, b) = (&self.labels[p][lp], &self.labels[q][lq]);
        let mut cost = T::zero();
        if let Some(e) = &a.expected[side] {
            cost += l1(e, &b.color);
        }
        if let Some(e) = &b.expected[OPPOSITE[side]] {
            cost += l1(&a.color, e);
        }
        cost
    }

    /// Undirected edges as `(p, side, q)` with side right or bottom.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut e = Vec::new();
        for p in 0..self.len() {
            for side in [1, 3] {
                if let Some(q) = self.neighbors[p][side] {
                    e.push((p, side, q));
                }
            }
        }
        e
    }

    /// Total energy of a labeling.
    pub fn energy(&self, labels: &[usize]) -> T {
        let mut e = T::zero();
        for (p, &l) in labels.iter().enumerate() {
            e += self.data_cost(p, l);
        }
        for (p, side, q) in self.edges() {
            e += self.discontinuity_cost(p, side, labels[p], labels[q]);
        }
        e
    }

    pub fn tables(&self) -> CostTables<T> {
        let unary = (0..self.len())
            .map(|p| {
                (0..self.labels[p].len())
                    .map(|l| self.data_cost(p, l))
                    .collect()
            })
            .collect();
        let pairs = self
            .edges()
            .into_iter()
            .map(|(p, side, q)| {
                let (np, nq) = (self.labels[p].len(), self.labels[q].len());
                let mut m = Vec::with_capacity(np * nq);
                for lp in 0..np {
                    for lq in 0..nq {
                        m.push(self.discontinuity_cost(p, side, lp, lq));
                    }
                }
                (p, q, m)
            })
            .collect();
        CostTables { unary, pairs }
    }
}

/// Explicit unary and pairwise cost tables. Pairwise matrices are row-major in
/// `(label of first, label of second)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTables<T> {
    pub unary: Vec<Vec<T>>,
    pub pairs: Vec<(usize, usize, Vec<T>)>,
}

impl<T: Real> CostTables<T> {
    pub fn energy(&self, labels: &[usize]) -> T {
        let mut e = T::zero();
        for (p, &l) in labels.iter().enumerate() {
            e += self.unary[p][l];
        }
        for (p, q, m) in &self.pairs {
            e += m[labels[*p] * self.unary[*q].len() + labels[*q]];
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.unary.len();
        if self.unary.iter().any(|u| u.is_empty()) {
            return Err(Error::InvalidArgument(
                "every pixel needs at least one label".into(),
            ));
        }
        for (p, q, m) in &self.pairs {
            if *p >= n
                || *q >= n
                || p == q
                || m.len() != self.unary[*p].len() * self.unary[*q].len()
            {
                return Err(Error::InvalidArgument(format!("malformed edge ({p}, {q})")));
            }
        }
        Ok(())
    }
}

fn argmin<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Synchronous min-sum belief propagation with per-message normalization.
/// Each pixel takes the argmin of its belief (lowest label on ties); the
/// returned labeling is the lowest-energy one decoded over all iterations.
pub fn solve_tables_bp<T: Real>(tables: &CostTables<T>, iterations: usize) -> Labeling<T> {
    solve_tables_bp_damped(tables, iterations, T::zero())
}

/// Like [`solve_tables_bp`], but each new message is blended with the previous
/// one: `m = (1 - damping) * m_new + damping * m_old`. Damping tames the
/// oscillation of synchronous updates on large loopy grids.
pub fn solve_tables_bp_damped<T: Real>(
    tables: &CostTables<T>,
    iterations: usize,
    damping: T,
) -> Labeling<T> {
    let n = tables.unary.len();
    // Directed message 2e goes first -> second of pair e, 2e + 1 the other way.
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, (p, q, _)) in tables.pairs.iter().enumerate() {
        incoming[*q].push(2 * e);
        incoming[*p].push(2 * e + 1);
    }
    let receiver = |d: usize| {
        let (p, q, _) = &tables.pairs[d / 2];
        if d.is_multiple_of(2) {
            *q
        } else {
            *p
        }
    };
    let mut msgs: Vec<Vec<T>> = (0..2 * tables.pairs.len())
        .map(|d| vec![T::zero(); tables.unary[receiver(d)].len()])
        .collect();

    let decode = |msgs: &[Vec<T>]| -> Vec<usize> {
        (0..n)
            .map(|p| {
                let mut b = tables.unary[p].clone();
                for &inc in &incoming[p] {
                    for (l, v) in b.iter_mut().enumerate() {
                        *v += msgs[inc][l];
                    }
                }
                argmin(&b)
            })
            .collect()
    };
    // Loopy messages can oscillate, so the lowest-energy decoded labeling wins.
    let mut best_labels = decode(&msgs);
    let mut best_energy = tables.energy(&best_labels);
    for _ in 0..iterations {
        let prev = &msgs;
        msgs = (0..msgs.len())
            .into_par_iter()
            .map(|d| {
                let (p, q, m) = &tables.pairs[d / 2];
                let (from, to) = if d % 2 == 0 { (*p, *q) } else { (*q, *p) };
                let reverse = d ^ 1;
                let nf = tables.unary[from].len();
                let nt = tables.unary[to].len();
                let h: Vec<T> = (0..nf)
                    .map(|lf| {
                        let mut s = tables.unary[from][lf];
                        for &inc in &incoming[from] {
                            if inc != reverse {
                                s += msgs[inc][lf];
                            }
                        }
                        s
                    })
                    .collect();
                let nq = tables.unary[*q].len();
                let mut out: Vec<T> = (0..nt)
                    .map(|lt| {
                        let mut best: Option<T> = None;
                        for (lf, hf) in h.iter().enumerate() {
                            let pair = if d % 2 == 0 {
                                m[lf * nq + lt]
                            } else {
                                m[lt * nq + lf]
                            };
                            let c = *hf + pair;
                            if best.is_none_or(|b| c < b) {
                                best = Some(c);
                            }
                        }
                        best.expect("non-empty label set")
                    })
                    .collect();
                let lo = out
                    .iter()
                    .copied()
                    .fold(out[0], |a, b| if b < a { b } else { a });
                out.iter_mut().for_each(|v| *v -= lo);
                if damping > T::zero() {
                    for (o, p) in out.iter_mut().zip(&prev[d]) {
                        *o = (T::one() - damping) * *o + damping * *p;
                    }
                }
                out
            })
            .collect();
        let labels = decode(&msgs);
        let energy = tables.energy(&labels);
        if energy < best_energy {
            best_labels = labels;
            best_energy = energy;
        }
    }
    Labeling {
        labels: best_labels,
        energy: best_energy,
    }
}

pub fn solve_map_bp<T: Real>(problem: &MrfProblem<T>, iterations: usize) -> Labeling<T> {
    let mut l = solve_tables_bp(&problem.tables(), iterations);
    l.energy = problem.energy(&l.labels);
    l
}

pub fn solve_map_bp_damped<T: Real>(
    problem: &MrfProblem<T>,
    iterations: usize,
    damping: T,
) -> Labeling<T> {
    let mut l = solve_tables_bp_damped(&problem.tables(), iterations, damping);
    l.energy = problem.energy(&l.labels);
    l
}

/// Iterated conditional modes: sweeps the pixels in order, moving each to the
/// label that minimizes its local energy given its neighbors, until nothing
/// changes or `max_sweeps` is reached. Never increases the energy.
pub fn polish_icm<T: Real>(
    problem: &MrfProblem<T>,
    mut labels: Vec<usize>,
    max_sweeps: usize,
) -> Labeling<T> {
    for _ in 0..max_sweeps {
        let mut changed = false;
        for p in 0..problem.len() {
            let local = |l: usize, labels: &[usize]| {
                let mut e = problem.data_cost(p, l);
                for side in 0..4 {
                    if let Some(q) = problem.neighbors[p][side] {
                        e += problem.discontinuity_cost(p, side, l, labels[q]);
                    }
                }
                e
            };
            let mut best = (local(labels[p], &labels), labels[p]);
            for l in 0..problem.labels[p].len() {
                let e = local(l, &labels);
                if e < best.0 {
                    best = (e, l);
                }
            }
            if best.1 != labels[p] {
                labels[p] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let energy = problem.energy(&labels);
    Labeling { labels, energy }
}

/// Exact minimum by enumeration; among equal energies the lexicographically
/// smallest labeling (pixel order, then label index) wins.
pub fn solve_tables_exhaustive<T: Real>(tables: &CostTables<T>) -> Result<Labeling<T>> {
    let mut total: u64 = 1;
    for u in &tables.unary {
        total = total.saturating_mul(u.len() as u64);
        if total > EXHAUSTIVE_CAP {
            return Err(Error::TooLarge(format!(
                "more than {EXHAUSTIVE_CAP} labelings"
            )));
        }
    }
    let n = tables.unary.len();
    let mut cur = vec![0usize; n];
    let mut best = Labeling {
        labels: cur.clone(),
        energy: tables.energy(&cur),
    };
    loop {
        // Odometer with the last pixel fastest: lexicographic order.
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(best);
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < tables.unary[i].len() {
                break;
            }
            cur[i] = 0;
        }
        let e = tables.energy(&cur);
        if e < best.energy {
            best = Labeling {
                labels: cur.clone(),
                energy: e,
            };
        }
    }
}

pub fn solve_map_exhaustive<T: Real>(problem: &MrfProblem<T>) -> Result<Labeling<T>> {
    let mut l = solve_tables_exhaustive(&problem.tables())?;
    l.energy = problem.energy(&l.labels);
    Ok(l)
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

/// Lookup color for a source frame; distinct videos use different saturation.
pub fn provenance_color(s: SourceRef) -> [u8; 3] {
    let h = (s.frame as f64 * 0.618_033_988_75 + s.video as f64 * 0.29).fract();
    hsv(h, if s.video.is_multiple_of(2) { 0.85 } else { 0.5 }, 0.95)
}

/// Debug image: source colors inside the mask, black for blank pixels, dark gray outside.
pub fn provenance_image(prov: &ProvenanceMap, mask: &Mask) -> RgbImage {
    RgbImage::from_fn(prov.width, prov.height, |x, y| {
        image::Rgb(if !mask.get(x, y) {
            [40, 40, 40]
        } else {
            prov.get(x, y).map_or([0, 0, 0], provenance_color)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ld(color: [f64; 3], expected: [Option<[f64; 3]>; 4]) -> LabelData<f64> {
        LabelData { color, expected }
    }

    #[test]
    fn data_cost_cases() {
        let label = ld([0.0; 3], [Some([10.0, 10.0, 10.0]), None, None, None]);
        let interior = MrfProblem::new(
            vec![(5, 5)],
            vec![vec![label.clone()]],
            vec![[None; 4]],
            10.0,
        )
        .unwrap();
        assert_eq!(interior.data_cost(0, 0), 10.0);
        let exact = MrfProblem::new(
            vec![(5, 5)],
            vec![vec![label.clone()]],
            vec![[Some([10.0; 3]), None, None, None]],
            10.0,
        )
        .unwrap();
        assert_eq!(exact.data_cost(0, 0), 0.0);
        let off = MrfProblem::new(
            vec![(5, 5)],
            vec![vec![label]],
            vec![[Some([13.0, 10.0, 10.0]), None, None, None]],
            10.0,
        )
        .unwrap();
        assert_eq!(off.data_cost(0, 0), 3.0);
    }

    #[test]
    fn discontinuity_arithmetic_and_symmetry() {
        // q is left of p.
        let p = ld([5.0; 3], [Some([0.0; 3]), None, None, None]);
        let q = ld([3.0, 0.0, 0.0], [None, Some([5.0, 5.0, 8.0]), None, None]);
        let prob = MrfProblem::new(
            vec![(1, 0), (0, 0)],
            vec![vec![p], vec![q]],
            vec![[None; 4]; 2],
            10.0,
        )
        .unwrap();
        assert_eq!(prob.discontinuity_cost(0, 0, 0, 0), 6.0);
        assert_eq!(prob.discontinuity_cost(1, 1, 0, 0), 6.0);
    }

    fn random_label(rng: &mut ChaCha8Rng) -> LabelData<f64> {
        let c = |rng: &mut ChaCha8Rng| [0; 3].map(|_| rng.random_range(0.0..255.0));
        let color = c(rng);
        let expected = [0; 4].map(|_| Some(c(rng)));
        ld(color, expected)
    }

    fn random_problem(
        rng: &mut ChaCha8Rng,
        pixels: Vec<(u32, u32)>,
        max_labels: usize,
    ) -> MrfProblem<f64> {
        let set: std::collections::HashSet<_> = pixels.iter().copied().collect();
        let labels = pixels
            .iter()
            .map(|_| {
                (0..rng.random_range(1..=max_labels))
                    .map(|_| random_label(rng))
                    .collect()
            })
            .collect();
        let boundary = pixels
            .iter()
            .map(|&(x, y)| {
                NEIGHBORS.map(|(dx, dy)| {
                    let q = ((x as i64 + dx) as u32, (y as i64 + dy) as u32);
                    (!set.contains(&q)).then(|| [0; 3].map(|_| rng.random_range(0.0..255.0)))
                })
            })
            .collect();
        MrfProblem::new(pixels, labels, boundary, 10.0).unwrap()
    }

    #[test]
    fn chain_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_problem(&mut rng, vec![(2, 2), (3, 2), (4, 2)], 2);
            let bp = solve_map_bp(&p, 30);
            let ex = solve_map_exhaustive(&p).unwrap();
            assert_eq!(bp.energy, ex.energy);
        }
    }

    #[test]
    fn single_label_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_problem(&mut rng, vec![(2, 2), (3, 2), (3, 3)], 1);
        let l = solve_map_bp(&p, 30);
        assert_eq!(l.labels, vec![0, 0, 0]);
        assert_eq!(l.energy, p.energy(&[0, 0, 0]));
    }

    #[test]
    fn uniform_costs_pick_lexicographically_smallest() {
        let l = ld([1.0; 3], [None; 4]);
        let p = MrfProblem::new(
            vec![(0, 0), (1, 0)],
            vec![vec![l.clone(), l.clone()], vec![l.clone(), l]],
            vec![[None; 4]; 2],
            10.0,
        )
        .unwrap();
        assert_eq!(solve_map_exhaustive(&p).unwrap().labels, vec![0, 0]);
        assert_eq!(solve_map_bp(&p, 10).labels, vec![0, 0]);
    }

    #[test]
    fn too_large_rejected() {
        let tables = CostTables {
            unary: vec![vec![0.0f64; 10]; 7],
            pairs: vec![],
        };
        assert!(matches!(
            solve_tables_exhaustive(&tables),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn constant_shift_keeps_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(&mut rng, vec![(0, 0), (1, 0), (0, 1), (1, 1)], 3);
        let t = p.tables();
        let mut shifted = t.clone();
        shifted.unary.iter_mut().flatten().for_each(|v| *v += 7.0);
        let (a, b) = (
            solve_tables_exhaustive(&t).unwrap(),
            solve_tables_exhaustive(&shifted).unwrap(),
        );
        assert_eq!(a.labels, b.labels);
        assert!((b.energy - a.energy - 28.0).abs() < 1e-9);
        assert_eq!(
            solve_tables_bp(&t, 30).labels,
            solve_tables_bp(&shifted, 30).labels
        );
    }

    #[test]
    fn icm_never_raises_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid: Vec<(u32, u32)> = (0..4).flat_map(|y| (0..4).map(move |x| (x, y))).collect();
        for _ in 0..20 {
            let p = random_problem(&mut rng, grid.clone(), 3);
            let start: Vec<usize> = p
                .labels
                .iter()
                .map(|l| rng.random_range(0..l.len()))
                .collect();
            let e0 = p.energy(&start);
            let l = polish_icm(&p, start, 10);
            assert!(l.energy <= e0);
            assert_eq!(l.energy, p.energy(&l.labels));
        }
    }

    #[test]
    fn damped_bp_is_exact_on_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let p = random_problem(&mut rng, vec![(0, 0), (1, 0), (2, 0), (2, 1)], 3);
            let bp = solve_map_bp_damped(&p, 200, 0.5);
            assert_eq!(bp.energy, solve_map_exhaustive(&p).unwrap().energy);
        }
    }

    #[test]
    fn f32_problems_work() {
        let l = LabelData::<f32> {
            color: [1.0; 3],
            expected: [Some([2.0; 3]), None, None, None],
        };
        let p = MrfProblem::new(
            vec![(1, 1)],
            vec![vec![l]],
            vec![[Some([2.0f32; 3]), None, None, None]],
            10.0,
        )
        .unwrap();
        assert_eq!(solve_map_bp(&p, 5).energy, 0.0f32);
    }
}
