use std::path::PathBuf;

use scorecl_autodiff::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("zero-norm row {row} in {op}")]
    ZeroNorm { op: &'static str, row: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected \"SCL1\"")]
    BadMagic { found: Vec<u8> },
    #[error("header: {0}")]
    Header(String),
    #[error("tensor {tensor}: expected {expected} bytes, {available} available")]
    Truncated { tensor: String, expected: usize, available: usize },
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
    #[error("tensor {name}: header shape {header:?} does not match architecture shape {expected:?}")]
    ShapeMismatch { name: String, header: Vec<usize>, expected: Vec<usize> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
