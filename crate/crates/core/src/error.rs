use thiserror::Error;

/// Errors surfaced by the geometry, differentiation, and data layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A forward or backward value left the finite range. The string names
    /// the first offending operation.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("unstable time step: dt={dt:.3e} exceeds stability bound {bound:.3e}")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
