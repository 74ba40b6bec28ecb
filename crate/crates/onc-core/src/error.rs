//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: configuration
//! and usage problems, numerical failures (divergence, ill-conditioning,
//! non-convergent solvers), and structural failures such as a gain that does
//! not stabilize the plant.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OncError {
    /// Inconsistent matrix or vector dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// Invalid configuration value (non-finite entry, empty range, bad field).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// API misuse (calling observe past the horizon, empty batch, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// The closed loop A - BK is not even asymptotically stable.
    #[error("gain does not stabilize the plant: spectral radius {rho:.6} >= 1")]
    NotStabilizing { rho: f64 },

    /// The closed loop is stable but not within the requested decay margin.
    #[error(
        "target gamma {gamma} too aggressive: closed-loop spectral radius {rho:.6} >= 1 - gamma"
    )]
    GammaTooAggressive { rho: f64, gamma: f64 },

    /// Rejection sampling could not certify enough gains.
    #[error(
        "bank generation failed: {succeeded}/{requested} gains certified after {attempts} draws"
    )]
    BankGeneration {
        requested: usize,
        succeeded: usize,
        attempts: usize,
    },

    /// A state coordinate left the guarded region during simulation.
    #[error("state diverged at step {step}: |x| exceeded {bound:e}")]
    Divergence { step: usize, bound: f64 },

    /// Ill-conditioned or non-convergent numerical subproblem.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The oracle inner solver could not reach its accuracy target.
    #[error("oracle accuracy not reached on slice {slice} after {iterations} iterations")]
    OracleAccuracy { slice: usize, iterations: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, OncError>;
