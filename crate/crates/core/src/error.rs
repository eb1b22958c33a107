use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("autograd: {0}")]
    Autograd(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("image {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("non-finite loss at step {step} (alpha {alpha})")]
    NonFiniteLoss { step: usize, alpha: f64 },

    #[error("non-finite gradient for {param} at step {step} (alpha {alpha})")]
    NonFiniteGradient { step: usize, alpha: f64, param: String },

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("gradient check: {0}")]
    GradCheck(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures specific to reading or writing the checkpoint container.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unexpected end of file")]
    UnexpectedEof,
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("trailing bytes after tensor table")]
    TrailingBytes,
    #[error("tensor name is not valid utf-8")]
    BadName,
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error("tensor {0:?} is too large for the format")]
    TooLarge(String),
}
