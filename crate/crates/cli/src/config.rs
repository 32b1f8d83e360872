//! `key = value` run configuration with dotted namespaces.
//!
//! ```text
//! # comments and blank lines are ignored
//! grid.width = 128
//! unet.depth = 3
//! train.precision = 64
//! ```

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rangeseg::neighborhood::CoordMode;
use rangeseg::{GridConfig, LossConfig, ModelConfig, Precision, TrainConfig, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

pub const KEYS: &[&str] = &[
    "grid.height",
    "grid.width",
    "grid.delta_theta",
    "grid.delta_phi",
    "grid.theta_origin",
    "grid.phi_origin",
    "extractor.features",
    "extractor.mlp1",
    "extractor.mlp2",
    "extractor.coords",
    "extractor.wrap",
    "unet.depth",
    "unet.base_channels",
    "unet.batch_norm",
    "loss.gamma",
    "loss.use_focal",
    "loss.w0",
    "loss.sigma",
    "loss.class_weights",
    "train.learning_rate",
    "train.batch_size",
    "train.epochs",
    "train.bn_momentum",
    "train.seed",
    "train.checkpoint_interval",
    "train.precision",
    "train.max_steps",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("{key}: cannot parse {value:?}"))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

impl RunConfig {
    /// Applies a single `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let e = &mut self.model.extractor;
        let u = &mut self.model.unet;
        let t = &mut self.train;
        let g = &mut self.grid;
        let l = &mut self.loss;
        match key {
            "grid.height" => g.height = num(key, value)?,
            "grid.width" => g.width = num(key, value)?,
            "grid.delta_theta" => g.delta_theta = num(key, value)?,
            "grid.delta_phi" => g.delta_phi = num(key, value)?,
            "grid.theta_origin" => g.theta_origin = num(key, value)?,
            "grid.phi_origin" => g.phi_origin = num(key, value)?,
            "extractor.features" => {
                e.features = num(key, value)?;
                u.in_channels = e.features;
            }
            "extractor.mlp1" => e.mlp1 = list(key, value)?,
            "extractor.mlp2" => e.mlp2 = list(key, value)?,
            "extractor.coords" => {
                e.coords = match value {
                    "relative" => CoordMode::Relative,
                    "absolute" => CoordMode::Absolute,
                    _ => bail!("{key}: expected relative or absolute, got {value:?}"),
                }
            }
            "extractor.wrap" => e.wrap = num(key, value)?,
            "unet.depth" => u.depth = num(key, value)?,
            "unet.base_channels" => u.base_channels = num(key, value)?,
            "unet.batch_norm" => u.batch_norm = num(key, value)?,
            "loss.gamma" => l.gamma = num(key, value)?,
            "loss.use_focal" => l.use_focal = num(key, value)?,
            "loss.w0" => l.w0 = num(key, value)?,
            "loss.sigma" => l.sigma = num(key, value)?,
            "loss.class_weights" => {
                l.class_weights = if value == "auto" {
                    None
                } else {
                    let w: Vec<f64> = list(key, value)?;
                    Some(
                        w.try_into()
                            .map_err(|_| anyhow!("{key}: expected {NUM_CLASSES} comma-separated weights"))?,
                    )
                }
            }
            "train.learning_rate" => t.learning_rate = num(key, value)?,
            "train.batch_size" => t.batch_size = num(key, value)?,
            "train.epochs" => t.epochs = num(key, value)?,
            "train.bn_momentum" => t.bn_momentum = num(key, value)?,
            "train.seed" => t.seed = num(key, value)?,
            "train.checkpoint_interval" => t.checkpoint_interval = num(key, value)?,
            "train.precision" => {
                t.precision = match value {
                    "32" => Precision::F32,
                    "64" => Precision::F64,
                    _ => bail!("{key}: expected 32 or 64, got {value:?}"),
                }
            }
            "train.max_steps" => t.max_steps = if value == "none" { None } else { Some(num(key, value)?) },
            _ => bail!("unknown configuration key {key:?}; known keys: {}", KEYS.join(", ")),
        }
        Ok(())
    }

    /// Applies every assignment of a configuration text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            self.set(key.trim(), value).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `KEY=VALUE` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {o:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.grid.validate()?;
        cfg.model.validate()?;
        cfg.loss.validate()?;
        Ok(cfg)
    }
}
