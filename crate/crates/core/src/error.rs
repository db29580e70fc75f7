use thiserror::Error;

/// Errors produced by the solver and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument was NaN or infinite.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller violated a documented precondition (dimension mismatch,
    /// zero resolution, non-SPD matrix, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The operation is not available for this space or potential.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An iterative numerical procedure did not converge.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Newton iteration exceeded its budget.
    #[error("newton did not converge at step {step} after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
