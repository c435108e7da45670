use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("tape has no finalized output")]
    TapeNotFinalized,

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("non-finite value in {term} at epoch {epoch}")]
    NonFinite { term: String, epoch: usize },

    #[error("non-finite gradient entry {index}")]
    NonFiniteGradient { index: usize },

    #[error("parameter layout mismatch: expected {expected} values, got {got}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("empty sample set")]
    EmptyInput,

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: String, expected: String },

    #[error("{0} requires a grid-structured batch")]
    NeedsGrid(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit status: 1 configuration, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::NonFiniteGradient { .. } | Error::TapeNotFinalized => 2,
            Error::Io(_) | Error::Checkpoint { .. } | Error::CheckpointVersion { .. } => 3,
            Error::Config { .. }
            | Error::DimensionMismatch { .. }
            | Error::LayoutMismatch { .. }
            | Error::EmptyInput
            | Error::NeedsGrid(_) => 1,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
