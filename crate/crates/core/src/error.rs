use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("output space has {cardinality} elements, more than the cap of {cap}")]
    CapExceeded { cardinality: String, cap: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown example id {id} (table holds {size} entries)")]
    UnknownExampleId { id: usize, size: usize },

    #[error("evaluation tape does not belong to this network/parameter layout")]
    TapeMismatch,

    #[error("operation requires a {expected} network, got {got}")]
    WrongKind { expected: &'static str, got: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("interaction matrix is not symmetric negative semidefinite: {0}")]
    NotNsd(String),

    #[error("inference solver failed: {0}")]
    SolverFailure(String),

    #[error("{context}: not a permutation of 1..{k}")]
    NotAPermutation { context: String, k: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: label {label} outside 1..={k}")]
    LabelOutOfRange { line: usize, label: usize, k: usize },

    #[error("model is not unary (bilinear coupling over binary vectors required)")]
    NotUnary,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("{0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
