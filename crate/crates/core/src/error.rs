use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("edge record {index} ({src}, {dst}, type {edge_type}): {message}")]
    EdgeRecord {
        index: usize,
        src: usize,
        dst: usize,
        edge_type: usize,
        message: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("cannot split: {0}")]
    Split(String),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFinite { block: String },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        history: Vec<crate::training::EpochRecord>,
    },

    #[error("model has no classifier head")]
    MissingClassifier,

    #[error("instance too large for exhaustive path enumeration: estimated {estimate:.3e} walks > {limit:.0e}")]
    GuardExceeded { estimate: f64, limit: f64 },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
