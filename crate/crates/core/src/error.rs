use std::io;

use thiserror::Error;

/// Errors produced by the simulation, detection and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical argument outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or incomplete configuration. The message names the offending field.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
