use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("negative radicand in auxiliary variable (minimum {min:e})")]
    NegativeRadicand { min: f64 },

    #[error("zero radicand in auxiliary variable; H1 is undefined (raise C)")]
    ZeroRadicand,

    #[error("inverse of -laplacian requires a zero-mean field (mean {mean:e})")]
    NonZeroMean { mean: f64 },

    #[error("step size underflow at t = {t}: h = {h:e} (stiffness/instability)")]
    StepUnderflow { t: f64, h: f64 },

    #[error("invalid solver configuration: {0}")]
    SolverConfig(String),

    #[error("sample {index} (seed {seed}): {source}")]
    Sample {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid convolution: {0}")]
    Conv(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid training configuration: {0}")]
    TrainConfig(String),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
