//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by mesh construction, model evaluation, inference and I/O.
#[derive(Debug, Error)]
pub enum ShotError {
    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Geometry is degenerate or a mesh invariant is violated.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// A site falls outside the mesh hull.
    #[error("site {index} at ({x}, {y}) lies outside the mesh hull")]
    OutOfDomain { index: usize, x: f64, y: f64 },

    /// Candidate/knot selection produced an empty or undersized set.
    #[error("knot selection: {0}")]
    KnotSelection(String),

    /// A site is not covered by any basis function at the given range.
    #[error("site {index} is not covered by any basis function at range phi={phi}")]
    Coverage { index: usize, phi: f64 },

    /// Matrix dimensions disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numeric operation failed (factorization, non-finite value).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Input data violate a documented precondition.
    #[error("data error: {0}")]
    Data(String),

    /// An estimate is undefined for the given sample (no exceedances).
    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    /// File parsing or schema violation.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV layer failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON (manifest/checkpoint) failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, ShotError>;
