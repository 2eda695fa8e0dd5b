use nalgebra::DVector;
use thiserror::Error;

/// Crate-wide error type. The three failure classes map onto the CLI exit
/// codes: configuration errors exit 2, every numerical failure exits 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("stiffness error: step size underflow at t = {t:.6e} (h = {h:.3e}); \
             the explicit integrator cannot meet the requested tolerances")]
    Stiffness { t: f64, h: f64 },

    #[error("convergence error: no steady state within t = {t_max:.3e}/κ \
             (last windowed change {residual:.3e})")]
    Convergence {
        t_max: f64,
        residual: f64,
        /// State at the time the search was abandoned.
        last_state: DVector<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Stable CLI contract: 0 success, 1 numerical failure, 2 configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
