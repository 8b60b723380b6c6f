use std::path::PathBuf;

use sire_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("graph: {0}")]
    Graph(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: truncated at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: bad magic at byte 0: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("missing data files in {dir}: expected {expected:?}")]
    MissingFiles { dir: PathBuf, expected: Vec<String> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },
    #[error("parameter mismatch at layer {layer}: {reason}")]
    ParamMismatch { layer: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
