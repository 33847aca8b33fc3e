use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the polylogue pipeline.
#[derive(Debug, Error)]
pub enum PolylogueError {
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("incomplete bundle at {path}: missing {member}")]
    IncompleteBundle { path: PathBuf, member: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("persona {index} ({name}) has a degenerate (near-zero) direction")]
    DegeneratePersona { index: usize, name: String },

    #[error("trace {0} has an empty post-marker span")]
    DegenerateTrace(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("labels contain a single class; {0}")]
    DegenerateLabel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no tuning candidate has a valid (non-discarded) prompt")]
    NoValidConfig,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PolylogueError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors that come from numerics rather than malformed data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Self::Numeric(_) | Self::NonConvergence(_))
    }
}

pub type Result<T> = std::result::Result<T, PolylogueError>;
