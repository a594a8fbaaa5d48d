use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use svstitch::pipeline::{StitchConfig, Toggles};

use crate::CliError;

/// Default config file looked up in the working directory.
pub const CONFIG_NAME: &str = "config.json";

/// Contents of `config.json`; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stitch: StitchConfig,
    pub toggles: Toggles,
    /// Also write final composition masks and pairwise seam masks.
    pub dump_masks: bool,
}

impl RunConfig {
    /// The stitch configuration with disabled features removed.
    pub fn effective(&self) -> StitchConfig {
        self.toggles.apply(&self.stitch)
    }
}

/// Options shared by every command that runs the pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// JSON config file (default: ./config.json when present).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Skip cylindrical projection.
    #[arg(long)]
    pub no_cylindrical: bool,
    /// Drop the shape constraint.
    #[arg(long)]
    pub no_shape: bool,
    /// Drop the size constraint.
    #[arg(long)]
    pub no_size: bool,
    /// Drop the fold constraint.
    #[arg(long)]
    pub no_fold: bool,
    /// Grid cells down (rows).
    #[arg(long)]
    pub grid_u: Option<usize>,
    /// Grid cells across (columns).
    #[arg(long)]
    pub grid_v: Option<usize>,
    /// Alignment weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Distortion weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Rectangular-constraint weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Iteration cap per homography stage.
    #[arg(long)]
    pub max_iters_homography: Option<usize>,
    /// Iteration cap per mesh stage.
    #[arg(long)]
    pub max_iters_mesh: Option<usize>,
    /// Disable the coarse translation search.
    #[arg(long)]
    pub no_seed_search: bool,
    /// Seam feather width in pixels.
    #[arg(long)]
    pub feather: Option<f64>,
    /// Cylinder radius in pixels (default: each image's fx).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Write composition and seam masks too.
    #[arg(long)]
    pub dump_masks: bool,
}

fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
}

impl PipelineArgs {
    /// Config file (explicit or `./config.json`) with the flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => read_config(p)?,
            None if Path::new(CONFIG_NAME).is_file() => read_config(Path::new(CONFIG_NAME))?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.toggles;
        t.cylindrical &= !self.no_cylindrical;
        t.shape &= !self.no_shape;
        t.size &= !self.no_size;
        t.fold &= !self.no_fold;
        let s = &mut cfg.stitch;
        let a = &mut s.align;
        if let Some(v) = self.grid_u {
            a.grid_u = v;
        }
        if let Some(v) = self.grid_v {
            a.grid_v = v;
        }
        if let Some(v) = self.alpha {
            a.weights.alpha = v;
        }
        if let Some(v) = self.beta {
            a.weights.beta = v;
        }
        if let Some(v) = self.gamma {
            a.weights.gamma = v;
        }
        if let Some(v) = self.max_iters_homography {
            a.max_iters_homography = v;
        }
        if let Some(v) = self.max_iters_mesh {
            a.max_iters_mesh = v;
        }
        if self.no_seed_search {
            a.seed.enabled = false;
        }
        if let Some(v) = self.feather {
            s.seam.feather = v;
        }
        if self.radius.is_some() {
            s.radius = self.radius;
        }
        cfg.dump_masks |= self.dump_masks;
        cfg.effective().validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }
}
