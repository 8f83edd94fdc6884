use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (degenerate rectangle, bad counts,
    /// out-of-range truncation parameters, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called with arguments violating its contract,
    /// e.g. fields living on different grids.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The eigensolver failed or returned pairs violating the residual
    /// tolerance; carries the diagnostic.
    #[error("eigensolver error: {0}")]
    Eigen(String),

    /// An internal invariant check failed (e.g. block-matrix symmetry);
    /// indicates a bug, not bad input.
    #[error("internal invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
