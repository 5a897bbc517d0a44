use super::forward::posterior_probs;
use super::{DenoiserOutput, TokenSequence};
use crate::categorical::Categorical;
use crate::transition::TransitionModel;
use crate::{Error, Result};

/// Mixture weights and the posterior vertices they combine at one position.
pub(crate) struct PositionMixture {
    /// Candidate `x0_hat` values with `q(x_t | x0_hat) > 0`.
    pub candidates: Vec<usize>,
    /// `q(x_s | x_t, x0_hat)` for each candidate.
    pub vertices: Vec<Vec<f64>>,
    /// Predicted probability of each candidate, before renormalisation.
    pub raw_weights: Vec<f64>,
    pub weight_total: f64,
}

impl PositionMixture {
    pub fn build(
        model: &TransitionModel,
        prediction: &[f64],
        x_t: usize,
        t: usize,
        s: usize,
    ) -> Result<Self> {
        let mut candidates = Vec::new();
        let mut vertices = Vec::new();
        let mut raw_weights = Vec::new();
        for (x0_hat, &w) in prediction.iter().enumerate() {
            if let Some(v) = posterior_probs(model, x_t, x0_hat, t, s) {
                candidates.push(x0_hat);
                vertices.push(v);
                raw_weights.push(w);
            }
        }
        if candidates.is_empty() {
            return Err(Error::InconsistentEvidence);
        }
        let weight_total = raw_weights.iter().sum();
        Ok(Self { candidates, vertices, raw_weights, weight_total })
    }

    /// Normalised weights over the consistent candidates; uniform if the
    /// prediction puts no mass on any of them.
    pub fn weights(&self) -> Vec<f64> {
        if self.weight_total > 0.0 {
            self.raw_weights.iter().map(|w| w / self.weight_total).collect()
        } else {
            vec![1.0 / self.candidates.len() as f64; self.candidates.len()]
        }
    }

    pub fn mixture(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.vertices[0].len()];
        for (w, v) in self.weights().iter().zip(&self.vertices) {
            for (o, p) in out.iter_mut().zip(v) {
                *o += w * p;
            }
        }
        out
    }
}

/// `p(x_{t-stride} | x_t, y) = sum_x0 q(x_{t-stride} | x_t, x0) p(x0 | x_t, y)`
/// per position.
///
/// Candidates `x0` that could not have produced `x_t` (zero
/// `q(x_t | x0)`, e.g. an unmasked token under the Mask kind) contribute no
/// vertex; the remaining weights are renormalised.
pub fn reverse_step(
    model: &TransitionModel,
    output: &DenoiserOutput,
    x_t: &TokenSequence,
    t: usize,
    stride: usize,
) -> Result<Vec<Categorical>> {
    model.check_t(t)?;
    if stride == 0 || stride > t {
        return Err(Error::InvalidParameter(format!("stride {stride} invalid at t = {t}")));
    }
    if output.positions() != x_t.len() || output.num_tokens() != model.num_tokens() {
        return Err(Error::Shape(format!(
            "denoiser output {}x{} for {} positions and {} tokens",
            output.positions(),
            output.num_tokens(),
            x_t.len(),
            model.num_tokens()
        )));
    }
    let s = t - stride;
    x_t.tokens()
        .iter()
        .enumerate()
        .map(|(i, &token)| {
            model.check_token(token)?;
            let mix = PositionMixture::build(model, output.row(i), token, t, s)?;
            Ok(Categorical::from_raw(mix.mixture()))
        })
        .collect()
}
