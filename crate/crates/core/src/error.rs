use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operand shapes are incompatible.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An iterative routine hit its iteration cap before converging.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// A matrix required to be invertible is singular to working precision.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Recorded training loss stayed above 10x the initial loss for 20
    /// consecutive records.
    #[error("training diverged at epoch {epoch}: train mse {loss:.6e} vs initial {initial:.6e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    /// A gradient produced a NaN or infinite entry during training.
    #[error("non-finite gradient at epoch {epoch}")]
    NonFiniteGradient { epoch: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
