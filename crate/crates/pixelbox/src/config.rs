//! TOML run configuration: one file fully determines a training run.

use crate::loss::LossKind;
use crate::nn::{NetworkConfig, SgdConfig};
use crate::postprocess::PostprocessParams;
use crate::synth::DataConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported config_version {found} (expected {CONFIG_VERSION})")]
    Version { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_name() -> String {
    "run".into()
}
fn default_iterations() -> u64 {
    3000
}
fn default_checkpoint_stride() -> u64 {
    500
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_train_seed() -> u64 {
    11
}
fn default_eval_seed() -> u64 {
    9000
}
fn default_eval_scenes() -> usize {
    200
}
fn default_box_weight() -> f64 {
    1.0
}
fn default_loss_kind() -> LossKind {
    LossKind::Iou
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    /// A checkpoint is written every this many iterations, plus one at
    /// the end.
    #[serde(default = "default_checkpoint_stride")]
    pub checkpoint_stride: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_train_seed")]
    pub train_seed: u64,
    /// Seed of the held-out evaluation stream; must differ from
    /// `train_seed`.
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    #[serde(default = "default_eval_scenes")]
    pub eval_scenes: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_loss_kind")]
    pub kind: LossKind,
    /// Weight of the box term in the combined loss
    /// `(conf + w * box) / (1 + w)`.
    #[serde(default = "default_box_weight")]
    pub box_weight: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { kind: default_loss_kind(), box_weight: default_box_weight() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub config_version: u32,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub optimizer: SgdConfig,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub postprocess: PostprocessParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &std::path::Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.config_version != CONFIG_VERSION {
            return Err(ConfigError::Version { found: self.config_version });
        }
        if self.run.iterations == 0 {
            return Err(ConfigError::Invalid("run.iterations must be positive".into()));
        }
        if self.run.checkpoint_stride == 0 {
            return Err(ConfigError::Invalid("run.checkpoint_stride must be positive".into()));
        }
        if self.run.eval_scenes == 0 {
            return Err(ConfigError::Invalid("run.eval_scenes must be positive".into()));
        }
        if self.run.train_seed == self.run.eval_seed {
            return Err(ConfigError::Invalid(
                "run.eval_seed must differ from run.train_seed".into(),
            ));
        }
        if self.loss.box_weight <= 0.0 || !self.loss.box_weight.is_finite() {
            return Err(ConfigError::Invalid("loss.box_weight must be positive".into()));
        }
        self.data.validate().map_err(|e| ConfigError::Invalid(format!("data: {e}")))?;
        self.network.validate().map_err(|e| ConfigError::Invalid(format!("network: {e}")))?;
        self.optimizer.validate().map_err(|e| ConfigError::Invalid(format!("optimizer: {e}")))?;
        if !(0.0..=1.0).contains(&self.postprocess.tau) {
            return Err(ConfigError::Invalid("postprocess.tau must be in [0, 1]".into()));
        }
        Ok(())
    }
}
