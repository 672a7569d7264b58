//! Optional TOML configuration file.
//!
//! Every key is optional. A value given on the command line wins over the
//! file, and the file wins over the built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use se3_diffreg::reverse::InferenceMode;
use se3_diffreg::ScheduleKind;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schedule: Option<ScheduleKind>,
    pub steps: Option<usize>,
    pub gamma: Option<f64>,
    pub infer_steps: Option<usize>,
    pub mode: Option<InferenceMode>,
    pub seed: Option<u64>,
    pub decoupled_exp: Option<bool>,
    pub surrogate: Option<SurrogateChoice>,
    pub icp_iters: Option<usize>,
    pub trim: Option<f64>,
    pub icp_tol: Option<f64>,
    pub oracle_rot_sigma: Option<f64>,
    pub oracle_trans_sigma: Option<f64>,
    pub oracle_scaled: Option<bool>,
    pub repeats: Option<usize>,
    pub workers: Option<usize>,
    pub methods: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateChoice {
    /// Closed-form alignment through the known correspondences.
    Kabsch,
    /// Trimmed iterative closest point.
    Icp,
    /// Ground truth corrupted by random twist noise.
    Oracle,
}

#[derive(Debug)]
pub struct ConfigFileError {
    pub path: PathBuf,
    pub message: String,
}

impl std::fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config file {}: {}", self.path.display(), self.message)
    }
}

impl std::error::Error for ConfigFileError {}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let err = |message: String| ConfigFileError {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    }
}
