use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// `step` is the grid index of the first non-finite state.
    #[error("non-finite state in trajectory {trajectory} at step {step}")]
    NonFiniteState { trajectory: usize, step: usize },

    #[error("non-finite network output (first bad layer: {layer})")]
    NonFiniteOutput { layer: usize },

    #[error("non-finite gradient{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFiniteGradient { step: Option<usize> },

    #[error("control outside the cost domain: {0}")]
    ControlDomain(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("actor targets were built for different policy parameters")]
    StaleTargets,

    #[error("reference function has zero norm on the sampled points")]
    ZeroReferenceNorm,

    #[error("problem `{0}` has no reference solution")]
    MissingReference(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
