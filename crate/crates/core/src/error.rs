use thiserror::Error;

use crate::krylov::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate block entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },

    #[error("block index ({row}, {col}) out of range for {num_rows} block rows")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        num_rows: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid sparsity pattern: {0}")]
    InvalidPattern(String),

    #[error("block row {0} has no diagonal block")]
    MissingDiagonal(usize),

    #[error("singular diagonal block in block row {0}")]
    SingularPivot(usize),

    #[error("parallel plan does not fit this matrix: {0}")]
    InvalidPlan(String),

    #[error("{requested} partitions requested for {rows} block rows")]
    TooManyPartitions { requested: usize, rows: usize },

    #[error("copy plan no longer matches the matrices")]
    PlanInvalidated,

    #[error("invalid well data: {0}")]
    InvalidWell(String),

    #[error("multisegment well matrix is singular")]
    SingularWellMatrix,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("blocking error: {0}")]
    Blocking(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("invalid solver configuration: {0}")]
    Config(String),

    #[error(
        "configured backend and reference solver both failed \
         (primary: {:?}, reference: {:?})",
        primary.status,
        fallback.status
    )]
    SolveFailed {
        primary: Box<SolveReport>,
        fallback: Box<SolveReport>,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
