use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is empty")]
    EmptyInput(String),
    #[error("line {line}: {count} tokens exceeds the limit of {limit}")]
    TokenLimit { line: usize, count: usize, limit: usize },
    #[error("non-binary value {value:?} at cell ({row}, {col})")]
    NonBinaryCell { row: usize, col: usize, value: String },
    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("malformed line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("column {label:?} is degenerate (all zeros or all ones); filter it first")]
    DegenerateColumn { label: String },
    #[error("no informative columns")]
    NoInformativeColumns,
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown label(s): {}", .0.join(", "))]
    UnknownLabels(Vec<String>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed document: {0}")]
    Document(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
