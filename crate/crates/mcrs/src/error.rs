//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter is outside its admissible domain.
    #[error("parameter out of domain: {0}")]
    ParamDomain(String),

    /// Too few observations for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Input has no variation (e.g. all samples identical).
    #[error("insufficient variation: {0}")]
    InsufficientVariation(String),

    /// A matrix that must be positive definite is not.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A parameter set implies a non-positive-definite window correlation
    /// matrix; carries the offending regime-label pattern (newest first).
    #[error("infeasible parameters: window pattern {pattern:?} gives a non-PD correlation matrix")]
    InfeasibleWindow { pattern: Vec<usize> },

    /// A cross-correlation system is singular for a variable pair.
    #[error("degenerate serial structure for variable pair ({i}, {j})")]
    DegeneratePair { i: usize, j: usize },

    /// Matrix shape or symmetry violation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An optimizer failed to converge; the best iterate found is retained.
    #[error("optimizer did not converge after {iters} iterations (best objective {best_value})")]
    NonConvergence { iters: usize, best_value: f64 },

    /// Malformed input file or inconsistent file contents.
    #[error("data error: {0}")]
    Data(String),
}
