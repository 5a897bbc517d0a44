use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token {token} out of range for {categories} categories")]
    TokenOutOfRange { token: usize, categories: usize },

    #[error("timestep {t} out of range 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("schedule saturated before timestep {t}: {detail}")]
    Saturated { t: usize, detail: String },

    #[error("schedule does not saturate: {0}")]
    NotSaturated(String),

    #[error("dense oracle limited to {limit} categories, model has {categories}")]
    OracleLimit { categories: usize, limit: usize },

    #[error("x_t = {x_t} has zero probability under x0 = {x0} at t = {t}")]
    InconsistentPair { x_t: usize, x0: usize, t: usize },

    #[error("observed sequence has zero likelihood under every candidate")]
    InconsistentEvidence,

    #[error("enumeration of {required} candidates exceeds cap {cap}")]
    EnumerationCap { required: usize, cap: usize },

    #[error("infinite loss: zero probability assigned to the true token at position {position}")]
    InfiniteLoss { position: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Vec<crate::diffusion::EpochLoss> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("internal consistency failure: {0}")]
    Internal(String),
}
