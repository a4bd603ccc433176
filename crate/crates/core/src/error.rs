use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the tracking library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyGrid { height: usize, width: usize },

    #[error("division by near-zero denominator at frequency ({row}, {col})")]
    DivisionByZero { row: usize, col: usize },

    #[error("spectrum is not conjugate-symmetric: imaginary residual {residual:e}")]
    NotConjugateSymmetric { residual: f64 },

    #[error("boxes must share width and height for the shared-size overlap")]
    UnequalBoxSizes,

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sequence {name}: {images} images but {boxes} ground-truth boxes")]
    FrameCountMismatch {
        name: String,
        images: usize,
        boxes: usize,
    },

    #[error("unsupported image {path}: {message}")]
    UnsupportedImage { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
