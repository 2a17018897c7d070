//! TOML run configuration.
//!
//! Every section and key is optional; unknown keys are errors.
//!
//! ```toml
//! seed = 7            # overrides noise.seed and model.seed
//!
//! [wedge]
//! n_traces = 51
//!
//! [noise]
//! sigma = 0.07
//!
//! [model]
//! n_residual_units = 4
//! feature_dim = 16
//!
//! [clip]
//! t = 2               # or: schedule = [0.4, 1.0]
//!
//! [fx]
//! filter_length_traces = 4
//!
//! [metrics]
//! bands = [[0, 10], [10, 20]]
//!
//! [corpus]
//! procedural_count = 32
//!
//! [output]
//! dtype = "f64"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid_file::Dtype;
use crate::clip::ClipSchedule;
use crate::error::{Error, Result};
use crate::fx::FxConfig;
use crate::metrics::default_bands;
use crate::nn::DenoiserConfig;
use crate::synth::{NoiseSpec, WedgeConfig};

/// Environment variable naming the config file used when none is given on
/// the command line.
pub const CONFIG_ENV: &str = "N2N_SEISMIC_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipSettings {
    pub t: usize,
    /// Absolute thresholds; replaces the evenly spaced default when set.
    pub schedule: Option<ClipSchedule>,
}

impl Default for ClipSettings {
    fn default() -> Self {
        Self { t: 2, schedule: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub bands: Vec<(f64, f64)>,
    /// Interval velocity for depth sections, in distance units per second.
    pub velocity: Option<f64>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            bands: default_bands(),
            velocity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub procedural_count: usize,
    pub procedural_size: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            procedural_count: 32,
            procedural_size: 128,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dtype: Dtype,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub wedge: WedgeConfig,
    pub noise: NoiseSpec,
    pub model: DenoiserConfig,
    pub clip: ClipSettings,
    pub fx: FxConfig,
    pub metrics: MetricSettings,
    pub corpus: CorpusSettings,
    pub output: OutputSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if let Some(seed) = config.seed {
            config.noise.seed = seed;
            config.model.seed = seed;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Loads `explicit`, else the file named by [`CONFIG_ENV`], else the
    /// defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::load(&path),
            None => Ok(Self::default()),
        }
    }
}
