use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::posterior_probs;
use super::reverse::reverse_step;
use super::{Condition, TokenSequence};
use crate::categorical::Categorical;
use crate::denoiser::{Denoiser, Prediction};
use crate::transition::TransitionModel;
use crate::{Error, Result};

/// Timesteps visited by strided sampling: `T, T - stride, ...`, always
/// ending at 0 (the last stride is shortened when it does not divide `T`).
pub fn stride_schedule(t_max: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let mut steps: Vec<usize> = (0..=t_max).rev().step_by(stride).collect();
    if steps.last() != Some(&0) {
        steps.push(0);
    }
    Ok(steps)
}

/// JSON document emitted by inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutput {
    pub seed: u64,
    pub stride: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub tokens: Vec<usize>,
}

/// One reverse transition `x_from -> x_to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseTrace {
    pub from_t: usize,
    pub t: usize,
    pub tokens: TokenSequence,
}

/// Generates a sequence of `len` tokens by strided reverse sampling from the
/// stationary distribution.
pub fn infer<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &TransitionModel,
    denoiser: &D,
    cond: Condition,
    len: usize,
    stride: usize,
    rng: &mut R,
) -> Result<TokenSequence> {
    let mut last = None;
    infer_with(model, denoiser, cond, len, stride, rng, |_, _, x| last = Some(x.clone()))?;
    Ok(last.expect("at least one reverse step"))
}

/// Like [`infer`], returning the initial `x_T` and every reverse step.
pub fn infer_trace<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &TransitionModel,
    denoiser: &D,
    cond: Condition,
    len: usize,
    stride: usize,
    rng: &mut R,
) -> Result<(TokenSequence, Vec<ReverseTrace>)> {
    let mut trace = Vec::new();
    let start = infer_with(model, denoiser, cond, len, stride, rng, |from_t, t, x| {
        trace.push(ReverseTrace { from_t, t, tokens: x.clone() })
    })?;
    Ok((start, trace))
}

fn infer_with<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &TransitionModel,
    denoiser: &D,
    cond: Condition,
    len: usize,
    stride: usize,
    rng: &mut R,
    mut on_step: impl FnMut(usize, usize, &TokenSequence),
) -> Result<TokenSequence> {
    let steps = stride_schedule(model.num_steps(), stride)?;
    let stationary = model.stationary_distribution()?;
    let start = TokenSequence((0..len).map(|_| stationary.sample(rng)).collect());
    let mut x = start.clone();
    for pair in steps.windows(2) {
        let (t, s) = (pair[0], pair[1]);
        x = match denoiser.predict(&x, t, cond)? {
            Prediction::Factorized(output) => {
                let dists = reverse_step(model, &output, &x, t, t - s)?;
                TokenSequence(dists.iter().map(|d| d.sample(rng)).collect())
            }
            Prediction::Joint(joint) => {
                let clean = joint.sample(rng).clone();
                let mut next = Vec::with_capacity(x.len());
                for (&obs, &c) in x.tokens().iter().zip(clean.tokens()) {
                    let probs = posterior_probs(model, obs, c, t, s)
                        .ok_or(Error::InconsistentPair { x_t: obs, x0: c, t })?;
                    next.push(Categorical::from_raw(probs).sample(rng));
                }
                TokenSequence(next)
            }
        };
        on_step(t, s, &x);
    }
    if let Some(i) = x.tokens().iter().position(|&tok| model.is_mask(tok)) {
        return Err(Error::Internal(format!("mask token left at position {i} after the final step")));
    }
    Ok(start)
}
