use std::path::PathBuf;

use thiserror::Error;

use crate::reverse::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Rotation angle too close to π for a unique logarithm.
    #[error("rotation angle {angle} rad is within the cut-locus margin of pi")]
    NearCutLocus { angle: f64 },

    #[error("invalid step count {0}")]
    InvalidStepCount(usize),

    #[error("step {step} outside 1..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error(
        "perturbation twist exceeded the log domain after {attempts} draws (gamma too large?)"
    )]
    PerturbationResampleExceeded { attempts: usize },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("noisy oracle surrogate requires a ground-truth transform")]
    MissingTruth,

    #[error("known-correspondence alignment requires correspondences")]
    MissingCorrespondences,

    #[error("correspondence index {index} out of range for model of {len} points")]
    BadCorrespondence { index: usize, len: usize },

    #[error("reverse step {step} failed: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
        trajectory: Box<Trajectory>,
    },

    #[error("only {available} points survived culling, {required} requested")]
    InsufficientPoints { available: usize, required: usize },

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported point-cloud format: {0}")]
    UnsupportedFormat(PathBuf),

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("error list is empty")]
    EmptyList,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
