use std::path::PathBuf;

use thiserror::Error;

/// Every failure surfaced by the library.
///
/// Variants are grouped into coarse categories (see [`ErrorCategory`]) so the
/// command-line front end can map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("training error at {stage} (index {index}): {reason}")]
    Training {
        stage: String,
        index: usize,
        reason: String,
    },

    #[error("transport produced a non-finite state at step {step}")]
    Transport { step: usize },

    #[error("degenerate task `{task}`: {reason}")]
    DegenerateTask { task: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Validation,
    Numeric,
    Parse,
    Compatibility,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::Validation => 3,
            ErrorCategory::Numeric => 4,
            ErrorCategory::Parse => 5,
            ErrorCategory::Compatibility => 6,
            ErrorCategory::Io => 7,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Shape { .. } | Error::Usage(_) => ErrorCategory::Usage,
            Error::Validation(_) | Error::DegenerateTask { .. } => ErrorCategory::Validation,
            Error::Training { .. } | Error::Transport { .. } => ErrorCategory::Numeric,
            Error::Parse { .. } => ErrorCategory::Parse,
            Error::Compatibility(_) => ErrorCategory::Compatibility,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
