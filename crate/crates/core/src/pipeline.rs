//! End-to-end run: map, optional fusion, depth, pose refinement, sampling,
//! label selection, blending and temporal smoothing.

use std::fs;
use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{evaluate, format_table, MetricsReport};
use crate::bp::{polish_icm, provenance_image, solve_map_bp_damped, MrfProblem};
use crate::config::PipelineConfig;
use crate::dataset::{
    frame_file, load_dataset, read_frames, write_json, CaptureSequence, FramePacket, ProvenanceMap,
};
use crate::error::{Error, Result};
use crate::geometry::{densify_depth, render_depth, PointCloud};
use crate::harmonize::{
    add_boundary_guidance, build_guidance_field, solve_poisson, BoundaryPrediction,
};
use crate::io::{ply, png, poses};
use crate::map::{fuse_maps, stitch_map, IcpConfig, MapConfig, RegistrationResult};
use crate::raster::Mask;
use crate::refine::{colorize_map, refine_rotation};
use crate::sampling::{
    blank_mask, build_label_space, composite, sample_all, scan_order, LabelSpace, Source,
};
use crate::temporal::{consecutive_flows, load_flows, temporal_smooth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementEntry {
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub error: f64,
    pub initial_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub masked_pixels: usize,
    pub blank_pixels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poisson_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poisson_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub frames: usize,
    pub stages: Vec<StageTiming>,
    pub masked_pixels: usize,
    /// Blank share of masked pixels using only the target video's own frames.
    pub blank_fraction_before_fusion: f64,
    /// Blank share with every source in play.
    pub blank_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registration: Option<Vec<RegistrationResult>>,
    pub per_frame: Vec<FrameReport>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub indices: Vec<usize>,
    /// Final frames.
    pub results: Vec<RgbImage>,
    /// Center-label composites straight from sampling, blanks black.
    pub composites: Vec<RgbImage>,
    pub provenance: Vec<ProvenanceMap>,
    pub masks: Vec<Mask>,
    pub metrics: Option<MetricsReport>,
    pub manifest: Manifest,
}

struct Stopwatch {
    stages: Vec<StageTiming>,
    start: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Stopwatch {
            stages: Vec::new(),
            start: Instant::now(),
        }
    }

    fn lap(&mut self, name: &str) {
        let seconds = self.start.elapsed().as_secs_f64();
        info!("{name}: {seconds:.2} s");
        self.stages.push(StageTiming {
            name: name.to_string(),
            seconds,
        });
        self.start = Instant::now();
    }
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

fn frame_depth(frame: &mut FramePacket, map: &PointCloud<f64>) -> Result<()> {
    let sparse = render_depth(map, &frame.pose, &frame.intrinsics);
    frame.depth = Some(densify_depth(&sparse).map_err(|e| e.in_stage("depth", Some(frame.index)))?);
    Ok(())
}

/// Label choice per entry of `space.pixels`: BP when enabled, otherwise the center label.
fn choose_labels(
    space: &LabelSpace,
    frame: &FramePacket,
    cfg: &PipelineConfig,
) -> Result<Vec<usize>> {
    let mut choice = vec![0usize; space.pixels.len()];
    if !cfg.bp.enabled {
        return Ok(choice);
    }
    let problem =
        MrfProblem::<f64>::from_label_space(space, &frame.image, &frame.mask, cfg.bp.alpha)?;
    if problem.is_empty() {
        return Ok(choice);
    }
    let bp = solve_map_bp_damped(&problem, cfg.bp.iterations, cfg.bp.damping);
    // On large loopy grids BP can settle above the trivial labeling; keep the better start.
    let center = vec![0usize; problem.len()];
    let start = if problem.energy(&center) < bp.energy {
        center
    } else {
        bp.labels
    };
    let labeling = polish_icm(&problem, start, cfg.bp.icm_sweeps);
    let mut it = labeling.labels.into_iter();
    for (c, p) in choice.iter_mut().zip(&space.pixels) {
        if !p.labels.is_empty() {
            *c = it.next().expect("one BP label per labelled pixel");
        }
    }
    Ok(choice)
}

fn boundary_predictions(space: &LabelSpace, choice: &[usize]) -> Vec<BoundaryPrediction<f64>> {
    space
        .pixels
        .iter()
        .zip(choice)
        .filter(|(p, _)| !p.labels.is_empty())
        .map(|(p, &c)| {
            let l = &p.labels[c];
            BoundaryPrediction {
                x: p.x,
                y: p.y,
                color: l.color,
                neighbors: l.expected,
            }
        })
        .collect()
}

/// Runs every enabled stage on in-memory captures. `videos[0]` is inpainted.
pub fn inpaint_sequences(
    mut videos: Vec<CaptureSequence>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    if videos.is_empty() {
        return Err(Error::Config("at least one dataset is required".into()));
    }
    if cfg.fuse.enabled && videos.len() < 2 {
        return Err(Error::Config("fusion needs a second dataset".into()));
    }
    if !cfg.fuse.enabled {
        videos.truncate(1);
    }
    for v in &videos {
        v.validate()?;
    }
    let mut clock = Stopwatch::new();

    let mut map = stitch_map(&videos[0], &cfg.map).map_err(|e| e.in_stage("map", None))?;
    if map.is_empty() {
        return Err(Error::InsufficientData("background map is empty".into()).in_stage("map", None));
    }
    clock.lap("map");

    let mut registration = None;
    if cfg.fuse.enabled {
        let mut regs = Vec::new();
        for v in videos.iter_mut().skip(1) {
            let (merged, poses, reg) = fuse_maps(&map, v, &cfg.map, &cfg.fuse.icp)
                .map_err(|e| e.in_stage("fuse", None))?;
            for (i, p) in poses.into_iter().enumerate() {
                v.set_world_from_sensor(i, p);
            }
            map = merged;
            regs.push(reg);
        }
        registration = Some(regs);
        clock.lap("fuse");
    }

    for v in videos.iter_mut() {
        v.frames
            .par_iter_mut()
            .try_for_each(|f| frame_depth(f, &map))?;
    }
    clock.lap("depth");

    let mut refinements: Vec<Option<RefinementEntry>> = vec![None; videos[0].len()];
    if cfg.refine.enabled {
        let all: Vec<&FramePacket> = videos.iter().flat_map(|v| v.frames.iter()).collect();
        let colored = colorize_map(&map, &all);
        for (vi, v) in videos.iter_mut().enumerate() {
            for (fi, frame) in v.frames.iter_mut().enumerate() {
                if frame.mask.is_empty() {
                    continue;
                }
                let r = refine_rotation(frame, &colored, &cfg.refine)
                    .map_err(|e| e.in_stage("refine", Some(frame.index)))?;
                debug!(
                    "video {vi} frame {}: pitch {:+.2} yaw {:+.2}",
                    frame.index, r.pitch_deg, r.yaw_deg
                );
                if vi == 0 {
                    refinements[fi] = Some(RefinementEntry {
                        pitch_deg: r.pitch_deg,
                        yaw_deg: r.yaw_deg,
                        error: r.error,
                        initial_error: r.initial_error,
                    });
                }
                if r.pose != frame.pose {
                    frame.pose = r.pose;
                    frame_depth(frame, &map)
                        .map_err(|e| e.in_stage("refine", Some(frame.index)))?;
                }
            }
        }
        clock.lap("refine");
    }

    let frames: Vec<Vec<FramePacket>> = videos.iter().map(|v| v.frames.clone()).collect();
    let n = frames[0].len();
    let mut spaces = Vec::with_capacity(n);
    let mut composites = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    let mut blank_before = 0usize;
    for t in 0..n {
        let target = &frames[0][t];
        let sources = scan_order(&frames, 0, t);
        let candidates = sample_all(target, &sources, &cfg.sample);
        if frames.len() > 1 {
            let own: Vec<Source> = sources
                .iter()
                .copied()
                .filter(|s| s.id.video == 0)
                .collect();
            blank_before += sample_all(target, &own, &cfg.sample)
                .iter()
                .filter(|c| !c.1.is_valid())
                .count();
        } else {
            blank_before += candidates.iter().filter(|c| !c.1.is_valid()).count();
        }
        let space = build_label_space(target, &candidates, &sources, cfg.sample.window_n);
        composites.push(composite(&target.image, &space, |_| 0, [0, 0, 0]));
        let mut prov = ProvenanceMap::empty(space.width, space.height);
        for p in &space.pixels {
            prov.set(p.x, p.y, p.source);
        }
        provenance.push(prov);
        spaces.push(space);
    }
    clock.lap("sample");

    let mut results = composites.clone();
    let mut choices: Vec<Vec<usize>> = spaces.iter().map(|s| vec![0; s.pixels.len()]).collect();
    if cfg.bp.enabled {
        let solved: Vec<(Vec<usize>, RgbImage)> = (0..n)
            .into_par_iter()
            .map(|t| {
                let choice = choose_labels(&spaces[t], &frames[0][t], cfg)
                    .map_err(|e| e.in_stage("bp", Some(frames[0][t].index)))?;
                let img = composite(&frames[0][t].image, &spaces[t], |i| choice[i], [0, 0, 0]);
                Ok((choice, img))
            })
            .collect::<Result<_>>()?;
        for (t, (c, img)) in solved.into_iter().enumerate() {
            choices[t] = c;
            results[t] = img;
        }
        clock.lap("bp");
    }

    let mut poisson_stats = vec![None; n];
    if cfg.poisson.enabled {
        let solved: Vec<(RgbImage, (usize, f64))> = (0..n)
            .into_par_iter()
            .map(|t| {
                let frame = &frames[0][t];
                let mut field =
                    build_guidance_field::<f64>(&results[t], &provenance[t], &frame.mask);
                add_boundary_guidance(&mut field, &boundary_predictions(&spaces[t], &choices[t]));
                let sol = solve_poisson(&field, &results[t], &cfg.poisson)
                    .map_err(|e| e.in_stage("harmonize", Some(frame.index)))?;
                Ok((sol.apply(&results[t]), (sol.iterations, sol.residual)))
            })
            .collect::<Result<_>>()?;
        for (t, (img, stats)) in solved.into_iter().enumerate() {
            results[t] = img;
            poisson_stats[t] = Some(stats);
        }
        clock.lap("harmonize");
    }

    let masks: Vec<Mask> = frames[0].iter().map(|f| f.mask.clone()).collect();
    let indices: Vec<usize> = frames[0].iter().map(|f| f.index).collect();
    if cfg.temporal.enabled && n > 1 {
        let (fwd, bwd) = match &cfg.temporal.flow_dir {
            Some(dir) => load_flows(dir, &indices),
            None => consecutive_flows(&results),
        }
        .map_err(|e| e.in_stage("temporal", None))?;
        results = temporal_smooth(&results, &masks, &fwd, &bwd, &cfg.temporal)
            .map_err(|e| e.in_stage("temporal", None))?;
    }
    if cfg.temporal.enabled {
        clock.lap("temporal");
    }

    let metrics = match &videos[0].ground_truth {
        Some(gt) if masks.iter().any(|m| !m.is_empty()) => Some(evaluate(&results, gt, &masks)?),
        _ => None,
    };

    let masked: usize = masks.iter().map(|m| m.count()).sum();
    let blanks: Vec<usize> = spaces.iter().map(|s| blank_mask(s).count()).collect();
    let per_frame = (0..n)
        .map(|t| FrameReport {
            frame: indices[t],
            masked_pixels: masks[t].count(),
            blank_pixels: blanks[t],
            refinement: refinements[t],
            poisson_iterations: poisson_stats[t].map(|s| s.0),
            poisson_residual: poisson_stats[t].map(|s| s.1),
        })
        .collect();
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        frames: n,
        stages: clock.stages,
        masked_pixels: masked,
        blank_fraction_before_fusion: fraction(blank_before, masked),
        blank_fraction: fraction(blanks.iter().sum(), masked),
        registration,
        per_frame,
    };
    Ok(PipelineOutput {
        indices,
        results,
        composites,
        provenance,
        masks,
        metrics,
        manifest,
    })
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes `inpainted/`, `composite/`, `provenance/`, `manifest.json` and,
/// with ground truth, `metrics.json` and `metrics.txt`.
pub fn write_outputs(out: &PipelineOutput, dir: &Path) -> Result<()> {
    for sub in ["inpainted", "composite", "provenance"] {
        create_dir(&dir.join(sub))?;
    }
    (0..out.indices.len())
        .into_par_iter()
        .try_for_each(|t| -> Result<()> {
            let i = out.indices[t];
            png::write_rgb(
                &frame_file(&dir.join("inpainted"), i, "png"),
                &out.results[t],
            )?;
            png::write_rgb(
                &frame_file(&dir.join("composite"), i, "png"),
                &out.composites[t],
            )?;
            png::write_rgb(
                &frame_file(&dir.join("provenance"), i, "png"),
                &provenance_image(&out.provenance[t], &out.masks[t]),
            )
        })?;
    if let Some(m) = &out.metrics {
        write_json(&dir.join("metrics.json"), m)?;
        let p = dir.join("metrics.txt");
        fs::write(&p, format_table(&[("inpainted", *m)])).map_err(|e| Error::io(p, e))?;
    }
    write_json(&dir.join("manifest.json"), &out.manifest)
}

/// Loads the configured datasets, runs the pipeline and writes its outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let count = if cfg.fuse.enabled {
        cfg.datasets.len()
    } else {
        1
    };
    let videos = cfg.datasets[..count]
        .iter()
        .map(|d| load_dataset(d))
        .collect::<Result<Vec<_>>>()?;
    let out = inpaint_sequences(videos, cfg)?;
    write_outputs(&out, &cfg.output_dir)?;
    Ok(out)
}

/// Registers `extra` into the map of `base`; writes `map.ply`, the corrected
/// `poses.txt` of `extra` and `registration.json` to `out_dir`.
pub fn fuse_datasets(
    base: &Path,
    extra: &Path,
    out_dir: &Path,
    map_cfg: &MapConfig,
    icp: &IcpConfig,
) -> Result<RegistrationResult> {
    let b = load_dataset(base)?;
    let e = load_dataset(extra)?;
    let base_map = stitch_map(&b, map_cfg).map_err(|err| err.in_stage("map", None))?;
    let (merged, poses, reg) =
        fuse_maps(&base_map, &e, map_cfg, icp).map_err(|err| err.in_stage("fuse", None))?;
    create_dir(out_dir)?;
    ply::write_ply(
        &out_dir.join("map.ply"),
        &merged,
        ply::PlyFormat::BinaryLittleEndian,
    )?;
    let indexed: Vec<_> = e.frames.iter().map(|f| f.index).zip(poses).collect();
    poses::write_poses(&out_dir.join("poses.txt"), &indexed)?;
    write_json(&out_dir.join("registration.json"), &reg)?;
    Ok(reg)
}

/// Scores `results/inpainted/%06d.png` (or `results/%06d.png`) against the
/// dataset's ground truth inside its masks.
pub fn evaluate_results(results: &Path, dataset: &Path) -> Result<MetricsReport> {
    let seq = load_dataset(dataset)?;
    let gt = seq
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::Data(format!("{} has no ground_truth/", dataset.display())))?;
    let dir = if results.join("inpainted").is_dir() {
        results.join("inpainted")
    } else {
        results.to_path_buf()
    };
    let indices: Vec<usize> = seq.frames.iter().map(|f| f.index).collect();
    let images = read_frames(&dir, &indices)?;
    let masks: Vec<Mask> = seq.frames.iter().map(|f| f.mask.clone()).collect();
    evaluate(&images, gt, &masks)
}
