use thiserror::Error;

use crate::generator::Probe;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unreachable: {0}")]
    Unreachable(String),

    #[error("obstacle unavoidable: {0}")]
    ObstacleUnavoidable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("A/D table error at line {line}: {msg}")]
    Table { line: usize, msg: String },

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("classification error: {0}")]
    Classification(String),

    #[error("unstable boundary after {} probes", .0.len())]
    UnstableBoundary(Vec<Probe>),

    #[error("campaign incomplete: {0}")]
    Incomplete(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

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

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
