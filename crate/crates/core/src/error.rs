use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading MNIST IDX files.
#[derive(Debug, Error)]
pub enum MnistError {
    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated payload, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at index {index} is outside 0..=9")]
    InvalidLabel {
        path: PathBuf,
        index: usize,
        label: u8,
    },
    #[error("{path}: unsupported image dimensions {rows}x{cols}")]
    BadDimensions { path: PathBuf, rows: usize, cols: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid hyperparameters, shapes that do not chain, or bad CLI input.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Mnist(#[from] MnistError),
    /// Non-finite losses or gradients, dead representations.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    /// Broken internal contract, e.g. a stale forward cache.
    #[error("internal error: {0}")]
    Internal(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingArtifact(_) => 3,
            Error::Numerical(_) => 4,
            _ => 1,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Mnist(_) => "mnist",
            Error::Numerical(_) => "numerical",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Internal(_) => "internal",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
