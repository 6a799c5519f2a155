use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the agent, model, simulator or harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid SLO `{name}`: {reason}")]
    InvalidSlo { name: String, reason: String },

    #[error("cannot evaluate threshold on parameter `{parameter}`: {reason}")]
    ThresholdEvaluation { parameter: String, reason: String },

    #[error("metric `{0}` missing from sample")]
    MissingMetric(String),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("SLO set is empty")]
    NoSlos,

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("global median surprise is zero")]
    DegenerateHistory,

    #[error("no observed configurations to interpolate from")]
    ColdStart,

    #[error("profile not found: {0}")]
    ProfileNotFound(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("invalid experiment config: {0}")]
    InvalidExperiment(String),

    #[error("cannot write output {path}: {source}")]
    UnwritableOutput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("replay trace {path} does not match the service schema: {detail}")]
    ReplaySchemaMismatch { path: PathBuf, detail: String },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps a serde_json error with the file (or other source) it came from,
    /// keeping the line/column that serde reports.
    pub fn parse(context: impl Into<String>, err: serde_json::Error) -> Self {
        Error::Parse {
            context: context.into(),
            message: err.to_string(),
        }
    }
}
