use rand::Rng;

use super::TokenSequence;
use crate::categorical::Categorical;
use crate::transition::TransitionModel;
use crate::{Error, Result};

/// Samples `x_t ~ q(x_t | x_0)` independently per position.
pub fn forward_sample<R: Rng + ?Sized>(
    model: &TransitionModel,
    x0: &TokenSequence,
    t: usize,
    rng: &mut R,
) -> Result<TokenSequence> {
    model.check_t(t)?;
    for &x in x0.tokens() {
        model.check_data_token(x)?;
    }
    let kernel = model.cumulative_kernel(t);
    let tokens = x0
        .tokens()
        .iter()
        .map(|&x| Categorical::from_raw(model.kernel_column(kernel, x)).sample(rng))
        .collect();
    Ok(TokenSequence(tokens))
}

/// One-step Bayes posterior `q(x_{t-1} | x_t, x_0)`.
pub fn posterior(model: &TransitionModel, x_t: usize, x0: usize, t: usize) -> Result<Categorical> {
    if t == 0 {
        return Err(Error::TimestepOutOfRange { t, max: model.num_steps() });
    }
    strided_posterior(model, x_t, x0, t, t - 1)
}

/// Multi-step posterior `q(x_s | x_t, x_0)` for `s < t`, combining the
/// composite kernel from `s` to `t` with the cumulative kernel at `s`.
pub fn strided_posterior(
    model: &TransitionModel,
    x_t: usize,
    x0: usize,
    t: usize,
    s: usize,
) -> Result<Categorical> {
    model.check_token(x_t)?;
    model.check_data_token(x0)?;
    model.check_t(t)?;
    if s >= t {
        return Err(Error::InvalidParameter(format!("posterior target {s} not before {t}")));
    }
    posterior_probs(model, x_t, x0, t, s)
        .map(Categorical::from_raw)
        .ok_or(Error::InconsistentPair { x_t, x0, t })
}

/// Unchecked posterior; `None` when `q(x_t | x_0) = 0`.
pub(crate) fn posterior_probs(
    model: &TransitionModel,
    x_t: usize,
    x0: usize,
    t: usize,
    s: usize,
) -> Option<Vec<f64>> {
    let evidence = model.kernel_prob(model.cumulative_kernel(t), x_t, x0);
    if evidence <= 0.0 {
        return None;
    }
    let span = model.span_kernel(s, t);
    let prior = model.cumulative_kernel(s);
    let mut probs: Vec<f64> = (0..model.num_categories())
        .map(|x_s| model.kernel_prob(span, x_t, x_s) * model.kernel_prob(prior, x_s, x0))
        .collect();
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return None;
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Some(probs)
}
