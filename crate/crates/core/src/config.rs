//! Run configuration for `inpaint`, read from JSON.
//!
//! ```json
//! {
//!   "datasets": ["street", "street_second_pass"],
//!   "output_dir": "out",
//!   "seed": 7,
//!   "fuse": { "enabled": true },
//!   "bp": { "iterations": 30, "alpha": 10.0 },
//!   "temporal": { "radius": 2 }
//! }
//! ```
//!
//! The first dataset is the one inpainted; the others only serve as color
//! sources once fused. Relative paths are resolved against the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bp::BpConfig;
use crate::error::{Error, Result};
use crate::harmonize::PoissonConfig;
use crate::map::{IcpConfig, MapConfig};
use crate::refine::RefinementConfig;
use crate::sampling::SampleConfig;
use crate::temporal::SmoothingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct FuseConfig {
    pub enabled: bool,
    pub icp: IcpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub datasets: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub fuse: FuseConfig,
    #[serde(default)]
    pub refine: RefinementConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub bp: BpConfig,
    #[serde(default)]
    pub poisson: PoissonConfig,
    #[serde(default)]
    pub temporal: SmoothingConfig,
}

impl PipelineConfig {
    /// All stages on with default parameters, fusion off.
    pub fn new(datasets: Vec<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            datasets,
            output_dir: output_dir.into(),
            seed: 0,
            map: MapConfig::default(),
            fuse: FuseConfig::default(),
            refine: RefinementConfig::default(),
            sample: SampleConfig::default(),
            bp: BpConfig::default(),
            poisson: PoissonConfig::default(),
            temporal: SmoothingConfig::default(),
        }
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        cfg.datasets.iter_mut().for_each(resolve);
        resolve(&mut cfg.output_dir);
        if let Some(d) = cfg.temporal.flow_dir.as_mut() {
            resolve(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parameter ranges and the existence of every input path.
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("at least one dataset is required".into()));
        }
        for d in &self.datasets {
            if !d.is_dir() {
                return Err(Error::Config(format!(
                    "dataset {} does not exist",
                    d.display()
                )));
            }
        }
        if let Some(d) = &self.temporal.flow_dir {
            if !d.is_dir() {
                return Err(Error::Config(format!(
                    "flow directory {} does not exist",
                    d.display()
                )));
            }
        }
        if self.fuse.enabled && self.datasets.len() < 2 {
            return Err(Error::Config("fusion needs a second dataset".into()));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("map.voxel_size_m", self.map.voxel_size_m)?;
        positive(
            "fuse.icp.max_correspondence_m",
            self.fuse.icp.max_correspondence_m,
        )?;
        positive("poisson.tol", self.poisson.tol)?;
        if self.bp.alpha < 0.0 || !self.bp.alpha.is_finite() {
            return Err(Error::Config(format!(
                "bp.alpha must be >= 0, got {}",
                self.bp.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.bp.damping) {
            return Err(Error::Config(format!(
                "bp.damping must be in [0, 1), got {}",
                self.bp.damping
            )));
        }
        if self.poisson.max_iter_factor == 0 {
            return Err(Error::Config("poisson.max_iter_factor must be >= 1".into()));
        }
        if self.fuse.icp.max_iterations == 0 || self.fuse.icp.max_source_points == 0 {
            return Err(Error::Config(
                "fuse.icp iteration and point limits must be >= 1".into(),
            ));
        }
        if self.refine.enabled {
            self.refine.validate()?;
        }
        self.sample.validate()?;
        if self.temporal.enabled {
            self.temporal.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the normalized configuration (defaults filled in).
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Names of the stages this configuration runs, in order.
    pub fn stages(&self) -> Vec<&'static str> {
        let mut s = vec!["map"];
        if self.fuse.enabled {
            s.push("fuse");
        }
        s.push("depth");
        if self.refine.enabled {
            s.push("refine");
        }
        s.push("sample");
        if self.bp.enabled {
            s.push("bp");
        }
        if self.poisson.enabled {
            s.push("harmonize");
        }
        if self.temporal.enabled {
            s.push("temporal");
        }
        s
    }
}
