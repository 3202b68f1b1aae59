use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("not a checkpoint: {0}")]
    NotACheckpoint(String),

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint payload length mismatch: {0}")]
    PayloadLength(String),

    #[error("checkpoint manifest error: {0}")]
    Manifest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite {component} loss at iteration {iteration}")]
    NonFinite { iteration: u64, component: &'static str },

    #[error("frame source error: {0}")]
    Source(String),

    #[error("unknown parameter: {0}")]
    UnknownParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by bad user input (paths, files, flags) rather
    /// than a failure during a run. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Io(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
