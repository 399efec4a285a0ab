//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the engine.
///
/// `Config` maps to CLI exit code 2, everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad key, bad value, failed
    /// cross-field constraint).
    #[error("config error: {0}")]
    Config(String),

    /// Graph or mixing-matrix construction/validation failure.
    #[error("topology error: {0}")]
    Topology(String),

    /// Compression operator misuse (k out of range, non-finite input, ...).
    #[error("compression error: {0}")]
    Compression(String),

    /// Problem generation or oracle misuse.
    #[error("problem error: {0}")]
    Problem(String),

    /// Non-square or dimension-mismatched matrix input.
    #[error("shape error: {0}")]
    Shape(String),

    /// NaN/Inf detected in optimizer state; the run aborts at `iteration`.
    #[error("numeric failure at iteration {iteration}: {message}")]
    Numeric { iteration: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
