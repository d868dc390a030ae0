//! Error types shared across the pipeline.

use thiserror::Error;

/// All failures the pipeline can surface.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters.
    #[error("config error: {0}")]
    Config(String),

    /// Missing, malformed, or degenerate input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Training produced a non-finite loss.
    #[error("numerical divergence: {0}")]
    Divergence(String),
}

impl Error {
    /// Process exit code for this error class: 2 config, 3 data/io, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Divergence(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
