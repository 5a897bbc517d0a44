use super::forward::{forward_sample, posterior_probs};
use super::reverse::reverse_step;
use super::{Condition, DenoiserOutput, TokenSequence};
use crate::categorical::kl_divergence;
use crate::denoiser::Denoiser;
use crate::transition::TransitionModel;
use crate::{seeded_rng, Error, Result, DEFAULT_ENUMERATION_CAP};

/// Default weight of the auxiliary x0 loss.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub vlb: f64,
    pub aux: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `total = lambda * aux + vlb`.
pub fn total_loss(vlb: f64, aux: f64, lambda: f64) -> LossReport {
    debug_assert!(lambda >= 0.0, "negative aux weight");
    LossReport { vlb, aux, total: lambda * aux + vlb, lambda }
}

/// Mean over positions of `-ln p(x0_hat = x0[i])`.
pub fn aux_loss(output: &DenoiserOutput, x0: &TokenSequence) -> Result<f64> {
    if output.positions() != x0.len() {
        return Err(Error::Shape(format!(
            "{} predicted positions for {} tokens",
            output.positions(),
            x0.len()
        )));
    }
    if x0.is_empty() {
        return Err(Error::Shape("empty sequence".into()));
    }
    let mut sum = 0.0;
    for (i, &x) in x0.tokens().iter().enumerate() {
        let p = *output
            .row(i)
            .get(x)
            .ok_or(Error::TokenOutOfRange { token: x, categories: output.num_tokens() })?;
        if p <= 0.0 {
            return Err(Error::InfiniteLoss { position: i });
        }
        sum -= p.ln();
    }
    Ok(sum / x0.len() as f64)
}

/// `sum_i KL(q(x_{t-1} | x_t, x0)[i] || p(x_{t-1} | x_t)[i])` for one `x_t`.
pub(crate) fn step_kl(
    model: &TransitionModel,
    output: &DenoiserOutput,
    x_t: &TokenSequence,
    x0: &TokenSequence,
    t: usize,
) -> Result<f64> {
    let reverse = reverse_step(model, output, x_t, t, 1)?;
    let mut total = 0.0;
    for (i, p) in reverse.iter().enumerate() {
        let (obs, clean) = (x_t.0[i], x0.0[i]);
        let q = posterior_probs(model, obs, clean, t, t - 1)
            .ok_or(Error::InconsistentPair { x_t: obs, x0: clean, t })?;
        total += kl_divergence(&q, p.probs());
    }
    Ok(total)
}

/// Monte Carlo settings for the outer expectation over `x_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self { samples: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VlbOptions {
    /// Largest `categories^N` evaluated by exact enumeration.
    pub enumeration_cap: usize,
    /// Fallback when enumeration exceeds the cap; `None` makes that an error.
    pub monte_carlo: Option<MonteCarlo>,
}

impl Default for VlbOptions {
    fn default() -> Self {
        Self { enumeration_cap: DEFAULT_ENUMERATION_CAP, monte_carlo: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlbReport {
    /// Expected KL at `t = 1..=T-1` (index `t - 1`).
    pub step_terms: Vec<f64>,
    /// `KL(q(x_T | x0) || p(x_T))`.
    pub prior: f64,
    pub total: f64,
    /// Whether the expectation over `x_t` was enumerated exactly.
    pub exact: bool,
}

/// Full variational bound: expected per-step KL for `t = 1..=T-1` plus the
/// prior-matching term. `q` and `p` are factorised per position.
pub fn vlb_loss<D: Denoiser + ?Sized>(
    model: &TransitionModel,
    denoiser: &D,
    x0: &TokenSequence,
    cond: Condition,
    options: VlbOptions,
) -> Result<VlbReport> {
    for &x in x0.tokens() {
        model.check_data_token(x)?;
    }
    let stationary = model.stationary_distribution()?;
    let t_max = model.num_steps();
    let categories = model.num_categories();
    let enumerable = u32::try_from(x0.len())
        .ok()
        .and_then(|n| categories.checked_pow(n))
        .filter(|&count| count <= options.enumeration_cap);
    let exact = enumerable.is_some();
    if !exact && options.monte_carlo.is_none() {
        let required = categories.checked_pow(x0.len() as u32).unwrap_or(usize::MAX);
        return Err(Error::EnumerationCap { required, cap: options.enumeration_cap });
    }

    let mut step_terms = Vec::with_capacity(t_max.saturating_sub(1));
    for t in 1..t_max {
        let term_at = |x_t: &TokenSequence| -> Result<f64> {
            let output = denoiser.predict(x_t, t, cond)?.into_factorized(model.num_tokens())?;
            step_kl(model, &output, x_t, x0, t)
        };
        let term = if exact {
            let mut acc = 0.0;
            for_each_outcome(model, x0, t, |x_t, w| {
                acc += w * term_at(x_t)?;
                Ok(())
            })?;
            acc
        } else {
            let mc = options.monte_carlo.expect("checked above");
            let mut rng = seeded_rng(mc.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut acc = 0.0;
            for _ in 0..mc.samples {
                acc += term_at(&forward_sample(model, x0, t, &mut rng)?)?;
            }
            acc / mc.samples.max(1) as f64
        };
        step_terms.push(term);
    }

    let mut prior = 0.0;
    for &x in x0.tokens() {
        prior += model.cumulative_distribution(x, t_max)?.kl_divergence(&stationary);
    }
    let total = step_terms.iter().sum::<f64>() + prior;
    if !total.is_finite() {
        return Err(Error::NonFinite("variational bound".into()));
    }
    Ok(VlbReport { step_terms, prior, total, exact })
}

/// Visits every `x_t` with positive probability under `q(x_t | x0)`.
fn for_each_outcome(
    model: &TransitionModel,
    x0: &TokenSequence,
    t: usize,
    mut visit: impl FnMut(&TokenSequence, f64) -> Result<()>,
) -> Result<()> {
    let columns: Vec<Vec<f64>> = x0
        .tokens()
        .iter()
        .map(|&x| model.cumulative_distribution(x, t).map(|c| c.into_probs()))
        .collect::<Result<_>>()?;
    let categories = model.num_categories();
    let mut current = TokenSequence(vec![0; x0.len()]);
    loop {
        let w: f64 = current.0.iter().zip(&columns).map(|(&x, col)| col[x]).product();
        if w > 0.0 {
            visit(&current, w)?;
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == current.len() {
                return Ok(());
            }
            current.0[pos] += 1;
            if current.0[pos] < categories {
                break;
            }
            current.0[pos] = 0;
            pos += 1;
        }
    }
}
