use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation, synthesis, evaluation and file layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("degenerate aggregate: candidate sum norm {norm:e} is below 1e-12")]
    DegenerateAggregate { norm: f64 },
    #[error("scene renders no visible pixels")]
    EmptyScene,
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used as the CLI diagnostic prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::BehindCamera { .. } => "behind-camera",
            Error::Dimension(_) => "dimension",
            Error::Precondition(_) => "precondition",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::DegenerateAggregate { .. } => "degenerate-aggregate",
            Error::EmptyScene => "empty-scene",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
