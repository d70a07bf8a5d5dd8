use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (layer dims, lambda, tau, fractions...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input does not satisfy an operation's preconditions.
    #[error("input error: {0}")]
    Input(String),

    #[error("numeric error in layer {layer}: {message}")]
    Numeric { layer: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("experiment cell (fraction={fraction}, fold={fold}, method={method}) failed: {source}")]
    Cell {
        fraction: f64,
        fold: usize,
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// by a failing computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Parse { .. } | Error::Io { .. } | Error::Json(_) => true,
            Error::Cell { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
