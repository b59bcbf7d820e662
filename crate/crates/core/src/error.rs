use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("node {0} has incident edges but zero absolute degree")]
    IsolatedNode(usize),

    #[error("graph is not balanced under the given polarities: entry ({i}, {j}) = {value} after transform")]
    NotBalanced { i: usize, j: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("missing distance for edge ({0}, {1})")]
    MissingDistance(usize, usize),

    #[error("eigensolver did not converge for eigenvalue {0}")]
    NoConvergence(usize),

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("signal of length {len} is too short: need at least {needed} samples")]
    TooShort { len: usize, needed: usize },

    #[error("empty partition: {0}")]
    EmptyPartition(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
