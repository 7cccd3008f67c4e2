//! Run configuration: one TOML file with a section per stage.
//!
//! ```toml
//! [data]
//! motion = "bicep_curl"
//!
//! [filter]
//! order = 4
//! stages = [{ kind = "highpass", cutoff = 70.0 }]
//!
//! [model]
//! window = 16
//!
//! [train]
//! patience = 5
//! ```
//!
//! Every key is optional and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{ColumnSchema, Motion, PipelineConfig, SegmentationConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::signal::{EnvelopeConfig, FilterChainConfig};
use crate::synthgen::MotionProfile;
use crate::train::TrainConfig;

pub const CONFIG_ENV: &str = "EMG_FORGE_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Restrict loading to one motion class.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion: Option<Motion>,
    pub schema: ColumnSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Include the DC bin in the FFT cosine.
    pub include_dc: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { include_dc: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub seed: u64,
    /// Largest tolerated gap between streamed and batch predictions.
    pub tolerance: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub filter: FilterChainConfig,
    pub envelope: EnvelopeConfig,
    pub segmentation: SegmentationConfig,
    pub model: ModelConfig,
    /// Seed of the weight initialization.
    pub init_seed: u64,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: MotionProfile,
    pub stream: StreamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            filter: FilterChainConfig::default(),
            envelope: EnvelopeConfig::default(),
            segmentation: SegmentationConfig::default(),
            model: ModelConfig::default(),
            init_seed: 42,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synth: MotionProfile::default(),
            stream: StreamConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `explicit` if given, else the file named by `EMG_FORGE_CONFIG`,
    /// else the defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.filter.order < 1 {
            return Err(Error::InvalidOrder(self.filter.order));
        }
        if self.segmentation.min_distance < 1 || self.segmentation.top_k < 1 {
            return Err(Error::Config("segmentation min_distance and top_k must be >= 1".into()));
        }
        if self.stream.tolerance.is_nan() || self.stream.tolerance < 0.0 {
            return Err(Error::Config(format!(
                "stream tolerance must be >= 0, got {}",
                self.stream.tolerance
            )));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            filter: self.filter.clone(),
            envelope: self.envelope.clone(),
            segmentation: self.segmentation,
        }
    }
}
