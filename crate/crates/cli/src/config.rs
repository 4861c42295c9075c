//! Experiment configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tinbc::link::LlrMode;
use tinbc::scheme::{OrderMatrix, SystemSpec, UserSpec};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(rename = "P")]
    pub total_power: f64,
    pub users: Vec<UserSpec>,
    /// Weighted-sum objective, in the order of `users`.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub simulate: SimulateSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    /// Order matrices in row-major flat form.
    #[serde(default)]
    pub orders: Vec<Vec<u32>>,
    /// Steps of the power-split grid per sub-block for the benchmarks.
    #[serde(default = "default_power_steps")]
    pub power_steps: usize,
    /// Write dominated design candidates too.
    #[serde(default)]
    pub all_candidates: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub noise_samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub llr: LlrMode,
    /// Binary dump of the first frame of every user.
    #[serde(default)]
    pub dump: Option<String>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            frames: default_frames(),
            llr: LlrMode::Exact,
            dump: None,
        }
    }
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

fn default_power_steps() -> usize {
    20
}

fn default_frames() -> usize {
    100
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_SAMPLES: usize = 200_000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {0}, expected {CONFIG_SCHEMA_VERSION}")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        if config.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Version(config.schema_version));
        }
        config.spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if config.grid.power_steps == 0 {
            return Err(ConfigError::Invalid("grid.power_steps must be positive".into()));
        }
        Ok(config)
    }

    pub fn spec(&self) -> SystemSpec {
        SystemSpec::new(self.total_power, self.users.clone())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.users.len()])
    }

    pub fn order_matrices(&self) -> Result<Vec<OrderMatrix>, ConfigError> {
        self.grid
            .orders
            .iter()
            .map(|o| OrderMatrix::from_flat(self.users.len(), o).map_err(|e| ConfigError::Invalid(e.to_string())))
            .collect()
    }
}
