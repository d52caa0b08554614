use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DaapError>;

#[derive(Debug, Error)]
pub enum DaapError {
    #[error("invalid model: {}", join(.0))]
    InvalidModel(Vec<String>),

    #[error("invalid scenario: {}", join(.0))]
    InvalidScenario(Vec<String>),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("profile mismatch: {0}")]
    ProfileMismatch(String),

    #[error("zero-probability destination {next} queried for (t={t}, s={state}, a={action})")]
    UndefinedDestination {
        t: usize,
        state: usize,
        action: usize,
        next: usize,
    },

    #[error("observation of agent `{agent}` at epoch {epoch} has zero likelihood under every level")]
    ZeroLikelihood { agent: String, epoch: usize },

    #[error("empty observation log")]
    EmptyLog,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unsupported {what} version `{found}` (expected `{expected}`)")]
    Version {
        what: &'static str,
        found: String,
        expected: &'static str,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DaapError {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        DaapError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DaapError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, DaapError::InvalidParameter { .. })
    }
}

fn join(items: &[String]) -> String {
    items.join("; ")
}
