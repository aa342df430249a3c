use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that do not fit together (shapes, counts, ranges).
    #[error("usage: {0}")]
    Usage(String),

    /// A value left the domain of a formula (for instance a point outside the unit ball).
    #[error("domain: {0}")]
    Domain(String),

    #[error("non-finite gradient in tensor {index}")]
    NonFiniteGradient { index: usize },

    #[error("non-finite {kind} loss at batch {batch}")]
    NonFiniteLoss { batch: usize, kind: String },

    #[error("non-finite sample during reverse diffusion at step {step}")]
    NonFiniteSample { step: usize },

    #[error("non-finite embedding loss at epoch {epoch}")]
    EmbeddingDiverged { epoch: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Domain(_) => "domain",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NonFiniteSample { .. } => "non_finite_sample",
            Error::EmbeddingDiverged { .. } => "embedding_diverged",
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
        }
    }
}
