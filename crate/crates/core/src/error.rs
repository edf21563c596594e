use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sut(#[from] SutError),
    #[error("search failed: {0}")]
    Search(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Configuration problems. Messages name the offending field by its full key.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("failed to parse configuration: {0}")]
    Parse(String),
    #[error("topology: {0}")]
    Topology(String),
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Failures at the system-under-test boundary.
#[derive(Debug, Error)]
pub enum SutError {
    #[error("endpoint {0} unreachable: {1}")]
    Unreachable(String, String),
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("SUT reported error: {0}")]
    Remote(String),
    #[error("routing error: unknown site {0}")]
    UnknownSite(u16),
    #[error("operation not supported by binding: {0}")]
    Unsupported(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}
