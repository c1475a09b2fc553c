use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and the CLI front end.
#[derive(Debug, Error)]
pub enum DcfError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("cell label {label} out of range for {k} centers")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("operation requires variant {expected}, model has {got}")]
    WrongVariant { expected: &'static str, got: &'static str },

    #[error("fraction of variance unexplained is undefined for constant targets")]
    UndefinedFvu,

    #[error("solver aborted: {0}")]
    SolverAbort(String),

    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("data error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DcfError>;
