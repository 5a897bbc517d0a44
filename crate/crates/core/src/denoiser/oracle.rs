use super::{Denoiser, JointPosterior, Prediction};
use crate::categorical::Categorical;
use crate::corpus::WeightedExample;
use crate::diffusion::{Condition, TokenSequence};
use crate::transition::TransitionModel;
use crate::{Error, Result, DEFAULT_ENUMERATION_CAP};

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Exact posterior over a weighted dataset:
/// `p(x0 | x_t) ∝ w(x0) * prod_i q(x_t[i] | x0[i])`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    model: TransitionModel,
    dataset: Vec<WeightedExample>,
}

impl OracleDenoiser {
    pub fn new(model: TransitionModel, dataset: Vec<WeightedExample>) -> Result<Self> {
        Self::with_cap(model, dataset, DEFAULT_ENUMERATION_CAP)
    }

    /// `cap` bounds `dataset.len() * sequence_length`.
    pub fn with_cap(model: TransitionModel, dataset: Vec<WeightedExample>, cap: usize) -> Result<Self> {
        let Some(first) = dataset.first() else {
            return Err(Error::InvalidParameter("oracle needs a non-empty dataset".into()));
        };
        let len = first.tokens.len();
        let required = dataset.len() * len;
        if required > cap {
            return Err(Error::EnumerationCap { required, cap });
        }
        let mut totals = std::collections::BTreeMap::new();
        for ex in &dataset {
            if ex.tokens.len() != len {
                return Err(Error::Shape("oracle sequences must share one length".into()));
            }
            for &x in ex.tokens.tokens() {
                model.check_data_token(x)?;
            }
            if !(ex.weight.is_finite() && ex.weight >= 0.0) {
                return Err(Error::InvalidParameter(format!("invalid weight {}", ex.weight)));
            }
            *totals.entry(ex.condition).or_insert(0.0) += ex.weight;
        }
        if let Some((cond, total)) =
            totals.iter().find(|(_, total)| (**total - 1.0).abs() > WEIGHT_TOLERANCE)
        {
            return Err(Error::InvalidParameter(format!(
                "weights for condition {} sum to {total}",
                cond.0
            )));
        }
        Ok(Self { model, dataset })
    }

    pub fn model(&self) -> &TransitionModel {
        &self.model
    }

    pub fn dataset(&self) -> &[WeightedExample] {
        &self.dataset
    }

    /// Data distribution for one condition (the target of exact recovery).
    pub fn data_distribution(&self, cond: Condition) -> Vec<(TokenSequence, f64)> {
        self.dataset
            .iter()
            .filter(|ex| ex.condition == cond)
            .map(|ex| (ex.tokens.clone(), ex.weight))
            .collect()
    }

    /// Exact posterior over the condition's dataset sequences given `x_t`.
    pub fn oracle_predict(&self, x_t: &TokenSequence, t: usize, cond: Condition) -> Result<JointPosterior> {
        self.model.check_t(t)?;
        for &x in x_t.tokens() {
            self.model.check_token(x)?;
        }
        let kernel = self.model.cumulative_kernel(t);
        let mut candidates = Vec::new();
        let mut log_weights = Vec::new();
        for ex in self.dataset.iter().filter(|ex| ex.condition == cond) {
            if ex.tokens.len() != x_t.len() {
                return Err(Error::Shape(format!(
                    "x_t has {} positions, dataset sequences {}",
                    x_t.len(),
                    ex.tokens.len()
                )));
            }
            let mut lw = ex.weight.ln();
            for (&obs, &clean) in x_t.tokens().iter().zip(ex.tokens.tokens()) {
                lw += self.model.kernel_prob(kernel, obs, clean).ln();
            }
            candidates.push(ex.tokens.clone());
            log_weights.push(lw);
        }
        if candidates.is_empty() {
            return Err(Error::InvalidParameter(format!("condition {} not in dataset", cond.0)));
        }
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::InconsistentEvidence);
        }
        let weights = log_weights.iter().map(|lw| (lw - max).exp()).collect();
        Ok(JointPosterior { candidates, probs: Categorical::from_weights(weights)? })
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, x_t: &TokenSequence, t: usize, cond: Condition) -> Result<Prediction> {
        self.oracle_predict(x_t, t, cond).map(Prediction::Joint)
    }
}
