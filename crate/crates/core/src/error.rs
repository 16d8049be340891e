use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum GpmeError {
    /// Input data that cannot be used (non-finite samples, wrong shapes).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Inconsistent configuration (spacing mismatch, CFL violation, bad ranges).
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A time or point outside the domain of a trajectory.
    #[error("domain error: {0}")]
    Domain(String),

    /// A measure density that cannot be integrated on a lattice cell.
    #[error("density not integrable on cell {cell:?}: {message}")]
    NonIntegrable { cell: Vec<i64>, message: String },

    /// The resolvent iteration ran out of sweeps.
    #[error("resolvent solve did not converge after {sweeps} sweeps (residual {residual:e}, tolerance {tolerance:e})")]
    NonConvergence {
        sweeps: usize,
        residual: f64,
        tolerance: f64,
    },

    /// A reference quadrature failed to reach its tolerance.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GpmeError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        GpmeError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GpmeError>;
