use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("bad header: {0}")]
    Header(String),

    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("line {line}: vote {value} outside {{-1, 0, 1}} in column `{column}`")]
    VoteDomain {
        line: u64,
        column: String,
        value: String,
    },

    #[error("line {line}: label {value} outside {{-1, 1}}")]
    LabelDomain { line: u64, value: String },

    #[error("duplicate pair ({a}, {b})")]
    DuplicatePair { a: String, b: String },

    #[error("labeling function `{0}` abstains on every pair")]
    AllAbstainColumn(String),

    #[error("pair involves the same tuple `{0}` twice")]
    SelfPair(String),

    #[error("empty tuple id")]
    EmptyTupleId,

    #[error("no pairs in common between prediction and ground truth")]
    EmptyIntersection,

    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("transitivity mode {mode} is not valid for a {task} task")]
    ModeMismatch { mode: String, task: String },

    #[error("a trained transitivity network is required for {0}")]
    MissingNetwork(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("oracle size cap exceeded: {size} > {cap}")]
    OracleCap { size: usize, cap: usize },
}
