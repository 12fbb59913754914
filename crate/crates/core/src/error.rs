use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell ({row}, {col}) is outside a {n_rows}x{n_cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("symmetric eigensolver did not converge")]
    EigenNonConvergence,

    #[error("null space has dimension {found} but the graph has {expected} components")]
    RankMismatch { expected: usize, found: usize },

    #[error("u{row} and v{col} lie in different connected components")]
    DisconnectedPair { row: usize, col: usize },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid unit flow: {0}")]
    InvalidFlow(String),

    #[error("no path connects u{row} and v{col}")]
    NoPath { row: usize, col: usize },

    #[error("denominator {value:e} is too close to zero")]
    DegenerateDenominator { value: f64 },

    #[error("cell ({row}, {col}) is not observed")]
    TargetNotObserved { row: usize, col: usize },

    #[error("no length-3 path is available for cell ({row}, {col})")]
    NoLengthThreePath { row: usize, col: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
