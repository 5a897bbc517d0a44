//! Denoisers predicting `p(x0_hat | x_t, y)`.
//!
//! [`OracleDenoiser`] computes the exact Bayes posterior over a small weighted
//! dataset and returns it jointly over whole sequences. [`TabularDenoiser`] is
//! a trainable per-position softmax table indexed by condition, timestep and
//! current token.

mod oracle;
mod tabular;

use rand::Rng;

use crate::categorical::Categorical;
use crate::diffusion::{Condition, DenoiserOutput, TokenSequence};
use crate::Result;

pub use oracle::OracleDenoiser;
pub use tabular::{LogitTensor, TabularDenoiser, TabularPrediction};

/// Posterior over a finite set of candidate clean sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPosterior {
    pub candidates: Vec<TokenSequence>,
    pub probs: Categorical,
}

impl JointPosterior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &TokenSequence {
        &self.candidates[self.probs.sample(rng)]
    }

    /// Per-position marginals over `tokens` data tokens.
    pub fn marginals(&self, tokens: usize) -> Result<DenoiserOutput> {
        let positions = self.candidates.first().map_or(0, TokenSequence::len);
        let mut probs = vec![0.0; positions * tokens];
        for (seq, &w) in self.candidates.iter().zip(self.probs.probs()) {
            for (i, &x) in seq.tokens().iter().enumerate() {
                probs[i * tokens + x] += w;
            }
        }
        DenoiserOutput::new(positions, tokens, probs)
    }
}

pub enum Prediction {
    Factorized(DenoiserOutput),
    Joint(JointPosterior),
}

impl Prediction {
    /// Factorised view; joint predictions are reduced to their marginals.
    pub fn into_factorized(self, tokens: usize) -> Result<DenoiserOutput> {
        match self {
            Prediction::Factorized(out) => Ok(out),
            Prediction::Joint(joint) => joint.marginals(tokens),
        }
    }
}

/// Anything that can predict clean tokens from a noisy sequence.
pub trait Denoiser {
    fn predict(&self, x_t: &TokenSequence, t: usize, cond: Condition) -> Result<Prediction>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, x_t: &TokenSequence, t: usize, cond: Condition) -> Result<Prediction> {
        (**self).predict(x_t, t, cond)
    }
}
