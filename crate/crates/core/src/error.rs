use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("forcing covers {available:.6} s but integration needs {required:.6} s")]
    Coverage { available: f64, required: f64 },

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("ill-conditioned embedding: {0}")]
    IllConditioned(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("filter diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("innovation covariance is not positive definite at step {step}")]
    SingularUpdate { step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::SingularUpdate { .. } | Error::Numeric(_) => true,
            Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
