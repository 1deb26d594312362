//! Experiment configuration and run manifests.

use std::path::{Path, PathBuf};

use anyhow::Context;
use arne_core::game::GameParams;
use arne_core::ifg::{generate_synthetic, load_graph, Ifg, SyntheticParams};
use arne_core::rlarne::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    /// Path to a pruned graph file, relative to the config file.
    File(PathBuf),
    Synthetic(SyntheticParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Arne,
    Uniform,
    Cut,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Arne => "arne",
            Baseline::Uniform => "uniform",
            Baseline::Cut => "cut",
        }
    }
}

/// Serializable mirror of [`TrainConfig`]; every field is optional in the
/// file and falls back to the trainer defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub iterations: u64,
    pub warmup: u64,
    pub c_v: f64,
    pub c_v_post: f64,
    pub sharpness: f64,
    pub floor: f64,
    pub seed: u64,
    pub stride: u64,
    pub phi_stop: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            iterations: d.iterations,
            warmup: d.warmup,
            c_v: d.c_v,
            c_v_post: d.c_v_post,
            sharpness: d.sharpness,
            floor: d.floor,
            seed: d.seed,
            stride: d.stride,
            phi_stop: d.phi_stop,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            warmup: self.warmup,
            c_v: self.c_v,
            c_v_post: self.c_v_post,
            sharpness: self.sharpness,
            floor: self.floor,
            seed: self.seed,
            stride: self.stride,
            phi_stop: self.phi_stop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    #[serde(default = "GameParams::ransomware")]
    pub game: GameParams,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Certification and comparison tolerance.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_compare")]
    pub compare: Vec<Baseline>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_tol() -> f64 {
    0.5
}

fn default_compare() -> Vec<Baseline> {
    vec![Baseline::Arne, Baseline::Uniform, Baseline::Cut]
}

/// Command-line overrides shared by the config-driven commands.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Experiment config (JSON). A run manifest is accepted too.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads the config, resolves relative graph and output paths against
    /// the config's directory and applies the overrides.
    pub fn load(ov: &Overrides) -> anyhow::Result<Self> {
        let path = &ov.config;
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        if let GraphSource::File(file) = &mut cfg.graph {
            if file.is_relative() {
                *file = path.parent().unwrap_or(Path::new(".")).join(&*file);
            }
            if !file.exists() {
                return Err(UsageError(format!("graph file {} does not exist", file.display())).into());
            }
        }
        if cfg.out.is_relative() {
            cfg.out = path.parent().unwrap_or(Path::new(".")).join(&cfg.out);
        }
        if let Some(seed) = ov.seed {
            cfg.train.seed = seed;
        }
        if let Some(iters) = ov.iters {
            cfg.train.iterations = iters;
        }
        if let Some(out) = &ov.out {
            cfg.out = out.clone();
        }
        if !(cfg.tol >= 0.0) {
            return Err(UsageError(format!("tolerance must be nonnegative, got {}", cfg.tol)).into());
        }
        Ok(cfg)
    }

    pub fn ifg(&self) -> anyhow::Result<Ifg> {
        let ifg = match &self.graph {
            GraphSource::File(path) => Ifg::from_annotated(load_graph(path)?.annotated)?,
            GraphSource::Synthetic(params) => generate_synthetic(params)?,
        };
        Ok(ifg)
    }
}

/// Everything needed to repeat a training run. The config fields sit at the
/// top level so a manifest can be passed back as `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    #[serde(flatten)]
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> anyhow::Result<Self> {
        let mut config = config.clone();
        if let GraphSource::File(path) = &mut config.graph {
            *path = path
                .canonicalize()
                .with_context(|| format!("resolving {}", path.display()))?;
        }
        if let Ok(out) = config.out.canonicalize() {
            config.out = out;
        }
        Ok(Self {
            version: VERSION.to_string(),
            seed: config.train.seed,
            config,
        })
    }
}
