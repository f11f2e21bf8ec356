use std::path::PathBuf;

use tamperscope_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("discretization step must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("suppression sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("{0} tokens do not form a square grid")]
    NotSquareGrid(usize),
    #[error("top-k with k={k} needs 1 <= k <= {max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("expected {expected}x{expected} input, got {height}x{width}")]
    BadImageSize { expected: usize, height: usize, width: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint tensor {name}: {detail}")]
    ShapeMismatchOnLoad { name: String, detail: String },
    #[error("patch does not fit after {0} attempts")]
    PatchDoesNotFit(usize),
    #[error("cannot separate source and destination regions after {0} attempts")]
    CannotSeparate(usize),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("{what}: {left} vs {right} items")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("malformed image file: {0}")]
    BadImage(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }
}
