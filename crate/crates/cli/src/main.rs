use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use depth_inpaint::bench::{format_table, presets, SceneSpec};
use depth_inpaint::config::{FuseConfig, PipelineConfig};
use depth_inpaint::dataset::{generate_dataset, write_json};
use depth_inpaint::error::ErrorClass;
use depth_inpaint::map::MapConfig;
use depth_inpaint::pipeline::{evaluate_results, fuse_datasets, run_pipeline};
use depth_inpaint::Error;

#[derive(Parser)]
#[command(
    name = "depth-inpaint",
    version,
    about = "Depth-guided video inpainting for RGB + lidar captures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Forward drive with a crossing car and pedestrian.
    Street,
    /// Same, with per-frame exposure changes.
    StreetExposure,
    /// Two drives; writes `<out>/first` and `<out>/second`.
    Dual,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Generate {
        /// Scene description (JSON).
        #[arg(long, conflicts_with = "preset")]
        scene: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline described by a config file.
    Inpaint {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score inpainted frames against a dataset's ground truth.
    Evaluate {
        /// Output directory of `inpaint` (or a directory of frames).
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Where to write metrics.json and metrics.txt; printed only if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register a second capture into the first one's map.
    Fuse {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        extra: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn generate(
    scene: Option<&Path>,
    preset: Option<Preset>,
    seed: u64,
    frames: usize,
    out: &Path,
) -> Result<(), Error> {
    if frames == 0 {
        return Err(Error::Config("--frames must be at least 1".into()));
    }
    let spec = |s: SceneSpec| {
        s.validate()
            .map(|_| s)
            .map_err(|e| Error::Config(e.to_string()))
    };
    match (scene, preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let s = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            generate_dataset(&spec(s)?, out)?;
        }
        (None, Some(Preset::Street)) => {
            generate_dataset(&spec(presets::street(seed, frames, false))?, out)?;
        }
        (None, Some(Preset::StreetExposure)) => {
            generate_dataset(&spec(presets::street(seed, frames, true))?, out)?;
        }
        (None, Some(Preset::Dual)) => {
            let (a, b) = presets::dual_capture(seed, frames);
            generate_dataset(&spec(a)?, &out.join("first"))?;
            generate_dataset(&spec(b)?, &out.join("second"))?;
        }
        (None, None) => {
            return Err(Error::Config(
                "one of --scene or --preset is required".into(),
            ))
        }
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate {
            scene,
            preset,
            seed,
            frames,
            out,
        } => generate(scene.as_deref(), preset, seed, frames, &out),
        Command::Inpaint { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let out = run_pipeline(&cfg)?;
            println!(
                "{} frames, {} masked pixels, blank fraction {:.4}",
                out.indices.len(),
                out.manifest.masked_pixels,
                out.manifest.blank_fraction
            );
            if let Some(m) = &out.metrics {
                print!("{}", format_table(&[("result", *m)]));
            }
            Ok(())
        }
        Command::Evaluate {
            results,
            dataset,
            out,
        } => {
            let m = evaluate_results(&results, &dataset)?;
            let table = format_table(&[("result", m)]);
            print!("{table}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_json(&dir.join("metrics.json"), &m)?;
                fs::write(dir.join("metrics.txt"), table).map_err(|e| Error::io(&dir, e))?;
            }
            Ok(())
        }
        Command::Fuse { base, extra, out } => {
            let reg = fuse_datasets(
                &base,
                &extra,
                &out,
                &MapConfig::default(),
                &FuseConfig::default().icp,
            )?;
            println!(
                "residual {:.4} m, fitness {:.3}, {} iterations",
                reg.residual, reg.fitness, reg.iterations
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
