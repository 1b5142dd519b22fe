use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid MDP: {}", .0.join("; "))]
    InvalidMdp(Vec<String>),

    #[error("value iteration did not reach tolerance after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("chain is reducible")]
    Reducible,

    #[error("power iteration did not converge after {iterations} iterations (l1 step {step:e})")]
    StationaryNotConverged { iterations: usize, step: f64 },

    #[error("mixing-rate fit is degenerate: {0}")]
    FitDegenerate(String),

    #[error("Poisson series truncated at k_max={k_max} with residual {residual:e}")]
    SeriesNotConverged { k_max: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("stepsize precondition violated: alpha={alpha} must be < 1/c1={limit}")]
    StepSize { alpha: f64, limit: f64 },

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
