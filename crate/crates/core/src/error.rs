use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SufaError>;

#[derive(Debug, Error)]
pub enum SufaError {
    /// Shapes of matrices or parameter blocks do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scalar or matrix argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The inner k×k system of a low-rank solve is numerically singular.
    #[error("ill-conditioned system (condition estimate {condition:.3e}): {context}")]
    IllConditioned { condition: f64, context: String },

    /// A computation produced non-finite values.
    #[error("numeric failure{}: {message}", study.map(|s| format!(" in study {s}")).unwrap_or_default())]
    Numeric {
        study: Option<usize>,
        message: String,
    },

    /// Invalid user data (files, matrices handed to the library).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid run configuration, rejected before any computation.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SufaError {
    pub fn numeric(message: impl Into<String>) -> Self {
        SufaError::Numeric {
            study: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SufaError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            SufaError::Config(_) => 1,
            SufaError::Input(_) | SufaError::Io { .. } | SufaError::Dimension(_) => 2,
            SufaError::Domain(_) | SufaError::IllConditioned { .. } | SufaError::Numeric { .. } => 3,
        }
    }
}
