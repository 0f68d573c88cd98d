use thiserror::Error;

use crate::data::{Arm, ObservedGroup};

/// Errors raised by ingestion, estimation, slicing, bootstrap and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no records")]
    NoRecords,

    #[error("row {row}: {message}")]
    InvalidRecord { row: usize, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("{0} arm has no records")]
    EmptyArm(Arm),

    #[error("group {0} is empty")]
    EmptyGroup(ObservedGroup),

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("no compliers: treated program share does not exceed control program share")]
    NoCompliers,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid slice plan: {0}")]
    InvalidPlan(String),

    #[error("slice {slice}: {message}")]
    SliceFailed { slice: usize, message: String },

    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
