use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("environment step {step} failed: {message}")]
    EnvStep { step: usize, message: String },

    #[error("invalid environment input: {0}")]
    EnvInput(String),

    #[error("unknown channel: constraint {index} of {count}")]
    UnknownChannel { index: usize, count: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("constraint count mismatch: expected {expected}, got {got}")]
    ConstraintCount { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("enumeration budget exceeded: {paths} paths > {budget}")]
    EnumerationBudget { paths: f64, budget: f64 },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("primal-dual solver diverged at iteration {iteration}: gradient norm {norm:e}")]
    Diverged { iteration: usize, norm: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
