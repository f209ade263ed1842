use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("outside domain: {0}")]
    Domain(String),

    /// An exhaustive or bounded computation was asked to do more than it allows.
    #[error("guard violated: {0}")]
    Guard(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("unsupported schema: {0}")]
    Schema(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
