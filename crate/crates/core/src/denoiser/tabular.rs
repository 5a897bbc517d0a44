use serde::{Deserialize, Serialize};

use super::{Denoiser, Prediction};
use crate::diffusion::{Condition, DenoiserOutput, TokenSequence};
use crate::{Error, Result};

/// Dense 4-d tensor indexed `[condition][t - 1][current token][predicted token]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl LogitTensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    fn validate(&self) -> Result<()> {
        if self.shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {:?} holds {} values, found {}",
                self.shape,
                self.shape.iter().product::<usize>(),
                self.data.len()
            )));
        }
        Ok(())
    }

    /// Start of the row for `(cond, t, token)`; `t` is 1-based.
    pub fn row_offset(&self, cond: usize, t: usize, token: usize) -> usize {
        let [_, steps, categories, tokens] = self.shape;
        ((cond * steps + (t - 1)) * categories + token) * tokens
    }

    pub fn row(&self, cond: usize, t: usize, token: usize) -> &[f64] {
        let start = self.row_offset(cond, t, token);
        &self.data[start..start + self.shape[3]]
    }

    pub fn row_mut(&mut self, cond: usize, t: usize, token: usize) -> &mut [f64] {
        let start = self.row_offset(cond, t, token);
        let k = self.shape[3];
        &mut self.data[start..start + k]
    }
}

/// Output of [`TabularDenoiser::tabular_predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPrediction {
    pub output: DenoiserOutput,
    /// Set when the condition id has no table; the output is then uniform.
    pub unseen_condition: bool,
}

/// Per-position softmax table conditioned on `(condition, t, x_t[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabularDoc", into = "TabularDoc")]
pub struct TabularDenoiser {
    logits: LogitTensor,
    learning_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct TabularDoc {
    shape: [usize; 4],
    learning_rate: f64,
    logits: Vec<f64>,
}

impl TryFrom<TabularDoc> for TabularDenoiser {
    type Error = Error;

    fn try_from(doc: TabularDoc) -> Result<Self> {
        Self::from_logits(LogitTensor { shape: doc.shape, data: doc.logits }, doc.learning_rate)
    }
}

impl From<TabularDenoiser> for TabularDoc {
    fn from(d: TabularDenoiser) -> Self {
        TabularDoc { shape: d.logits.shape, learning_rate: d.learning_rate, logits: d.logits.data }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl TabularDenoiser {
    /// Zero-initialised table (uniform predictions).
    pub fn new(
        conditions: usize,
        steps: usize,
        categories: usize,
        tokens: usize,
        learning_rate: f64,
    ) -> Result<Self> {
        Self::from_logits(LogitTensor::zeros([conditions, steps, categories, tokens]), learning_rate)
    }

    pub fn from_logits(logits: LogitTensor, learning_rate: f64) -> Result<Self> {
        logits.validate()?;
        if logits.shape.contains(&0) {
            return Err(Error::Shape(format!("empty dimension in {:?}", logits.shape)));
        }
        if logits.shape[2] < logits.shape[3] {
            return Err(Error::Shape("fewer categories than predicted tokens".into()));
        }
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate {learning_rate}")));
        }
        if logits.data.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(Self { logits, learning_rate })
    }

    pub fn logits(&self) -> &LogitTensor {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut LogitTensor {
        &mut self.logits
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn num_conditions(&self) -> usize {
        self.logits.shape[0]
    }

    pub fn num_steps(&self) -> usize {
        self.logits.shape[1]
    }

    pub fn num_categories(&self) -> usize {
        self.logits.shape[2]
    }

    pub fn num_tokens(&self) -> usize {
        self.logits.shape[3]
    }

    pub fn zero_gradient(&self) -> LogitTensor {
        LogitTensor::zeros(self.logits.shape)
    }

    /// Softmax of the addressed rows, one per position.
    pub fn tabular_predict(
        &self,
        x_t: &TokenSequence,
        t: usize,
        cond: Condition,
    ) -> Result<TabularPrediction> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::TimestepOutOfRange { t, max: self.num_steps() });
        }
        if let Some(&token) = x_t.tokens().iter().find(|&&x| x >= self.num_categories()) {
            return Err(Error::TokenOutOfRange { token, categories: self.num_categories() });
        }
        let k = self.num_tokens();
        if cond.0 >= self.num_conditions() {
            return Ok(TabularPrediction {
                output: DenoiserOutput::uniform(x_t.len(), k),
                unseen_condition: true,
            });
        }
        let mut probs = Vec::with_capacity(x_t.len() * k);
        for &token in x_t.tokens() {
            probs.extend(softmax(self.logits.row(cond.0, t, token)));
        }
        Ok(TabularPrediction { output: DenoiserOutput::new(x_t.len(), k, probs)?, unseen_condition: false })
    }

    /// Plain gradient descent: `logits -= lr * grad`.
    pub fn tabular_update(&mut self, grad: &LogitTensor) -> Result<()> {
        grad.validate()?;
        if grad.shape != self.logits.shape {
            return Err(Error::Shape(format!(
                "gradient shape {:?} vs logits {:?}",
                grad.shape, self.logits.shape
            )));
        }
        if grad.data.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let lr = self.learning_rate;
        for (l, g) in self.logits.data.iter_mut().zip(&grad.data) {
            *l -= lr * g;
        }
        Ok(())
    }
}

impl Denoiser for TabularDenoiser {
    fn predict(&self, x_t: &TokenSequence, t: usize, cond: Condition) -> Result<Prediction> {
        let pred = self.tabular_predict(x_t, t, cond)?;
        if pred.unseen_condition {
            log::warn!("condition {} has no table; predicting uniform", cond.0);
        }
        Ok(Prediction::Factorized(pred.output))
    }
}
