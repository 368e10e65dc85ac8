use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("component {component} has vanishing mass {mass:e}")]
    EmptyComponent { component: usize, mass: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("graph is not connected")]
    NotConnected,

    #[error("alpha {alpha} outside (0, {upper})")]
    AlphaOutOfRange { alpha: f64, upper: f64 },

    #[error("power iteration did not converge after {iterations} iterations")]
    ConvergenceFailure { iterations: usize },

    #[error("hub partition does not match the communication graph: {0}")]
    PartitionMismatch(String),

    #[error("batch size {batch} not in [1, {examples}]")]
    InvalidBatch { batch: usize, examples: usize },

    #[error("invalid feature assignment: {0}")]
    InvalidAssignment(String),

    #[error("feature {feature} has zero variance")]
    ZeroVariance { feature: usize },

    #[error("could not place means with separation {separation} after {attempts} attempts")]
    SeparationInfeasible { separation: f64, attempts: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },

    #[error("agent {agent}: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_agent(self, agent: usize) -> Self {
        match self {
            e @ Error::Agent { .. } => e,
            e => Error::Agent {
                agent,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
