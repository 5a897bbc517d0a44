//! Discrete diffusion over categorical token sequences.
//!
//! The crate covers the full pipeline used to generate sequences of codebook
//! tokens with a discrete denoising diffusion model:
//!
//! - [`schedule`]: linear noise schedules stored as cumulative parameters.
//! - [`transition`]: uniform, absorbing-mask and mask+uniform transition
//!   kernels, their closed-form cumulative forms and a dense-matrix oracle.
//! - [`diffusion`]: forward corruption, Bayes posteriors, the
//!   x0-parameterised reverse step with strides, losses, training and
//!   inference loops.
//! - [`denoiser`]: an exact Bayes oracle and a trainable tabular denoiser.
//! - [`codebook`]: nearest-neighbour vector quantisation and VQ loss terms.
//! - [`corpus`]: mask-based caption generation and curriculum splitting.
//! - [`metrics`]: FID, paired KL and disturbance sensitivity sweeps.
//!
//! Token indices are 0-based. Kinds with an absorbing state put the mask token
//! at index `K`, directly after the `K` data tokens. Transition kernels use the
//! column convention: column `j` of `Q_t` is the distribution of `x_t` given
//! `x_{t-1} = j`.

pub mod categorical;
pub mod codebook;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
mod error;
pub mod metrics;
pub mod schedule;
pub mod transition;

pub use categorical::Categorical;
pub use error::{Error, Result};
pub use schedule::{MatrixKind, NoiseSchedule, ScheduleTargets, StepParams};
pub use transition::TransitionModel;

/// Default cap on the number of enumerated candidates (sequences or
/// dataset entries) before exact computations refuse to run.
pub const DEFAULT_ENUMERATION_CAP: usize = 4096;

/// Seeded random source used throughout the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's deterministic RNG from a seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
