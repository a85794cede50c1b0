use thiserror::Error;

use crate::simulation::Trajectory;

/// Errors raised by the network model, the analysis routines and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("network graph is not connected ({components} components)")]
    DisconnectedGraph { components: usize },

    #[error("{what} of {owner} must be strictly positive, got {value}")]
    NonPositiveParameter {
        what: &'static str,
        owner: String,
        value: f64,
    },

    #[error("{what} of {owner} must be nonnegative, got {value}")]
    NegativeParameter {
        what: &'static str,
        owner: String,
        value: f64,
    },

    #[error("line {line} connects node {node} to itself")]
    SelfLoop { line: usize, node: usize },

    #[error("line {line} references node {node}, but the network has {n} nodes")]
    UnknownNode { line: usize, node: usize, n: usize },

    #[error("voltage at node {node} is {value} V, outside the positive-voltage domain")]
    NonPositiveVoltage { node: usize, value: f64 },

    #[error("transform (lambda I + Hess(P) M) is rank deficient: smallest singular value {min_singular:e}")]
    RankDeficientTransform { min_singular: f64 },

    #[error("matrix D is singular")]
    SingularInputScaling,

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("need at least 3 samples, got {got}")]
    InsufficientSamples { got: usize },

    #[error("operation requires a single-node network without lines (n = {n}, m = {m})")]
    NetworkNotScalar { n: usize, m: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("voltage at node {node} left the positive domain at t = {time} s")]
    DomainExit {
        time: f64,
        node: usize,
        partial: Box<Trajectory>,
    },

    #[error("state became non-finite at t = {time} s")]
    NonFiniteState { time: f64 },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: field '{field}': {message}")]
    SchemaViolation {
        path: String,
        field: String,
        message: String,
    },

    #[error("{path}: {message}")]
    InvariantViolation { path: String, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DisconnectedGraph { .. } => "DisconnectedGraph",
            Error::NonPositiveParameter { .. } => "NonPositiveParameter",
            Error::NegativeParameter { .. } => "NegativeParameter",
            Error::SelfLoop { .. } => "SelfLoop",
            Error::UnknownNode { .. } => "UnknownNode",
            Error::NonPositiveVoltage { .. } => "NonPositiveVoltage",
            Error::RankDeficientTransform { .. } => "RankDeficientTransform",
            Error::SingularInputScaling => "SingularInputScaling",
            Error::NewtonDivergence { .. } => "NewtonDivergence",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::NetworkNotScalar { .. } => "NetworkNotScalar",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::DomainExit { .. } => "DomainExit",
            Error::NonFiniteState { .. } => "NonFiniteState",
            Error::Io { .. } => "IoError",
            Error::Parse { .. } => "ParseError",
            Error::SchemaViolation { .. } => "SchemaViolation",
            Error::InvariantViolation { .. } => "InvariantViolation",
            Error::Csv(_) => "CsvError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
