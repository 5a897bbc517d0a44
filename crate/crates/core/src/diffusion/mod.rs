//! Forward corruption, posteriors, the x0-parameterised reverse step, losses,
//! and the training and inference loops.

mod forward;
mod infer;
mod loss;
mod reverse;
mod train;

use serde::{Deserialize, Serialize};

use crate::categorical::SUM_TOLERANCE;
use crate::{Error, Result};

pub use forward::{forward_sample, posterior, strided_posterior};
pub use infer::{infer, infer_trace, stride_schedule, InferenceOutput, ReverseTrace};
pub use loss::{
    aux_loss, total_loss, vlb_loss, LossReport, MonteCarlo, VlbOptions, VlbReport, DEFAULT_LAMBDA,
};
pub use reverse::reverse_step;
pub use train::{finite_difference_gradient, loss_and_gradient, sample_loss, train, EpochLoss, TrainConfig, TrainTrace};

/// A sequence of token indices (`x_t` at any timestep).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for TokenSequence {
    fn from(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }
}

/// Opaque conditioning identifier standing in for text features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Condition(pub usize);

/// Factorised prediction `p(x0_hat | x_t, y)`: one distribution over the `K`
/// data tokens per position. Never carries mask probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    positions: usize,
    tokens: usize,
    probs: Vec<f64>,
}

impl DenoiserOutput {
    /// `probs` is row-major `positions x tokens`; every row must sum to one.
    pub fn new(positions: usize, tokens: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != positions * tokens || tokens == 0 {
            return Err(Error::Shape(format!(
                "{} values for a {positions}x{tokens} output",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks(tokens).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidParameter(format!("row {i} has invalid entries")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!("row {i} sums to {total}")));
            }
        }
        Ok(Self { positions, tokens, probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let tokens = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != tokens) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), tokens, rows.concat())
    }

    /// One-hot rows on the given sequence.
    pub fn one_hot(x0: &TokenSequence, tokens: usize) -> Result<Self> {
        let mut probs = vec![0.0; x0.len() * tokens];
        for (i, &x) in x0.tokens().iter().enumerate() {
            if x >= tokens {
                return Err(Error::TokenOutOfRange { token: x, categories: tokens });
            }
            probs[i * tokens + x] = 1.0;
        }
        Ok(Self { positions: x0.len(), tokens, probs })
    }

    pub fn uniform(positions: usize, tokens: usize) -> Self {
        Self { positions, tokens, probs: vec![1.0 / tokens as f64; positions * tokens] }
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.tokens..(i + 1) * self.tokens]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}
