use thiserror::Error;

/// Errors produced by the switching library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("discount {0} is not supported here; fixed-point routines require gamma < 1")]
    UnsupportedDiscount(f64),

    #[error("partition has {found} components, operation requires {expected}")]
    PartitionArity { expected: usize, found: usize },

    #[error("invalid cost specification: {0}")]
    InvalidCost(String),

    #[error("custom cost table has no entry for {0}")]
    MissingCostEntry(String),

    #[error("transport infeasible: source mass {source_mass} != target mass {target_mass}")]
    MassMismatch { source_mass: f64, target_mass: f64 },

    #[error("transport instance too large: {0} support points (limit {1})")]
    TooLarge(usize, usize),

    #[error("no convergence after {iters} iterations (last change {last_change:e})")]
    NotConverged { iters: usize, last_change: f64 },

    #[error("candidate set is empty")]
    EmptyCandidateSet,

    #[error("candidate set too large: {0} policies")]
    CandidateSetTooLarge(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
