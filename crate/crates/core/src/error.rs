use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config error: {0}")]
    Config(String),
    #[error("all keys masked")]
    NoKeys,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("inducing count mismatch: encoder h has {enc} rows, level expects {level}")]
    LevelMismatch { enc: usize, level: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cardinality mismatch: {0} vs {1}")]
    CardinalityMismatch(usize, usize),
    #[error("set of {n} points exceeds matching cap {cap}")]
    MatchingCap { n: usize, cap: usize },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("cardinality {0} outside the support of the distribution")]
    OutsideSupport(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
