use thiserror::Error;

/// Errors produced by the measure, solver and optimizer layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unbalanced measures: total masses {0} and {1} differ")]
    Unbalanced(f64, f64),

    #[error("too large for exact solver: {size} support points (cap {cap})")]
    TooLarge { size: usize, cap: usize },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("initial measure has zero total mass")]
    ZeroMass,

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("mass of particle {particle} became nonpositive at step {step}")]
    NonPositiveMass { step: usize, particle: usize },

    #[error("node index {index} out of range (last node {last})")]
    NodeOutOfRange { index: usize, last: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("model not u-differentiable")]
    NotControlDifferentiable,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
