use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum LeapError {
    /// A configuration value violates its documented bounds.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// The caller supplied inputs the operation cannot work with.
    #[error("usage error: {0}")]
    Usage(String),

    /// Mismatched lengths or shapes between arguments.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("numeric fault at {location}: {detail}")]
    Numeric { location: String, detail: String },

    /// A binary input file could not be decoded.
    #[error("parse error in {path} at byte offset {offset}: {reason}")]
    Parse {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    /// A landscape could not produce a valid minima catalog.
    #[error("catalog error: {0}")]
    Catalog(String),

    /// Not enough valid sweep points to fit an escape-time law.
    #[error("fit error: {0}")]
    Fit(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LeapError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LeapError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        LeapError::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LeapError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = LeapError> = std::result::Result<T, E>;
