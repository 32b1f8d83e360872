use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scan size {0} is not a multiple of 16 bytes")]
    SizeNotMultipleOf16(usize),
    #[error("non-finite value in record {index}")]
    NonFiniteValue { index: usize },
    #[error("bad magic bytes: {0}")]
    BadMagic(String),
    #[error("unsupported dtype or shape: {0}")]
    UnsupportedDtypeOrShape(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("point is the sensor origin")]
    ZeroPoint,
    #[error("range image has no {0:?} channel")]
    MissingChannel(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spatial size {height}x{width} is not divisible by {divisor}")]
    IndivisibleSpatialDims {
        height: usize,
        width: usize,
        divisor: usize,
    },
    #[error("non-finite or zero probability for the target class at pixel {pixel}")]
    NonFiniteProbability { pixel: usize },
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("samples have different shapes: {0}")]
    ShapeHeterogeneity(String),
    #[error("degenerate scene configuration: {0}")]
    DegenerateConfig(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] rangeseg_autograd::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
