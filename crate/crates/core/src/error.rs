use std::path::PathBuf;

use thiserror::Error;

/// A position that falls outside the admissible interior.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryViolation {
    pub index: usize,
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("ragged grid: row {row} has {found} columns, expected {expected}")]
    Format {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("cannot parse cell at row {row}, column {col}: {text:?}")]
    Parse { row: usize, col: usize, text: String },

    #[error("empty grid")]
    Empty,

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("bandwidth {k} too large for a {n}x{m} field")]
    BandwidthTooLarge { k: usize, n: usize, m: usize },

    #[error("{} position(s) outside the admissible interior (first: p={}, q={})",
        .0.len(), .0[0].p, .0[0].q)]
    Boundary(Vec<BoundaryViolation>),

    #[error("matrix size {size} exceeds the dense cap {cap}")]
    Size { size: usize, cap: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("block of {n0}x{m0} cells is too small for bandwidth {k}; increase q")]
    BlockTooSmall { n0: usize, m0: usize, k: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
