//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (layer sizes, patience values, experiment settings).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid argument to an operation (empty batch, rank out of range, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input outside the domain of a forward function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Training or an update step produced non-finite numbers.
    #[error("numeric divergence: {message}")]
    Numeric {
        message: String,
        /// Last epoch whose losses were all finite, if training got that far.
        last_finite_epoch: Option<usize>,
    },

    /// A model or dataset file failed to parse. `field` names the offending entry.
    #[error("parse error in {path} at line {line}, field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for validation errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Argument(_)
            | Error::Shape(_)
            | Error::Domain(_)
            | Error::Parse { .. } => 1,
            Error::Numeric { .. } | Error::Io(_) | Error::Json(_) => 2,
        }
    }
}
