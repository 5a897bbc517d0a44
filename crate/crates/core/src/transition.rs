//! Transition kernels for the three corruption kinds.
//!
//! Every kernel here has the same three-parameter shape: a token keeps its
//! value with probability `stay`, is resampled uniformly over the `K` data
//! tokens with total probability `K * spread`, and jumps to the absorbing mask
//! with probability `absorb`. The mask column is a point mass on the mask.
//! Single-step, multi-step and cumulative kernels only differ in which
//! parameters are plugged in, so they share [`Kernel`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::schedule::{MatrixKind, NoiseSchedule, StepParams};
use crate::{Error, Result};

/// Default largest category count the dense oracle will materialise.
pub const DENSE_ORACLE_LIMIT: usize = 64;

/// Tolerance on `alpha_bar` (or `beta_bar` for Mask) below which a schedule
/// counts as saturated.
pub const SATURATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Kernel {
    pub stay: f64,
    pub spread: f64,
    pub absorb: f64,
}

impl Kernel {
    fn from_params(kind: MatrixKind, p: StepParams) -> Self {
        match kind {
            MatrixKind::Uniform => Kernel { stay: p.alpha, spread: p.beta, absorb: 0.0 },
            MatrixKind::Mask => Kernel { stay: p.beta, spread: 0.0, absorb: p.gamma },
            MatrixKind::MaskUniform => Kernel { stay: p.alpha, spread: p.beta, absorb: p.gamma },
        }
    }
}

/// Transition model over `K` data tokens plus, for masking kinds, one
/// absorbing mask token at index `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    schedule: NoiseSchedule,
}

impl TransitionModel {
    pub fn new(schedule: NoiseSchedule) -> Self {
        Self { schedule }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn kind(&self) -> MatrixKind {
        self.schedule.kind()
    }

    /// Number of data tokens `K`.
    pub fn num_tokens(&self) -> usize {
        self.schedule.num_tokens()
    }

    /// `K` for Uniform, `K + 1` for the masking kinds.
    pub fn num_categories(&self) -> usize {
        self.num_tokens() + usize::from(self.kind().has_mask())
    }

    pub fn num_steps(&self) -> usize {
        self.schedule.num_steps()
    }

    pub fn mask_token(&self) -> Option<usize> {
        self.kind().has_mask().then(|| self.num_tokens())
    }

    pub fn is_mask(&self, token: usize) -> bool {
        self.mask_token() == Some(token)
    }

    pub(crate) fn check_token(&self, token: usize) -> Result<()> {
        let categories = self.num_categories();
        if token >= categories {
            return Err(Error::TokenOutOfRange { token, categories });
        }
        Ok(())
    }

    pub(crate) fn check_data_token(&self, token: usize) -> Result<()> {
        if token >= self.num_tokens() {
            return Err(Error::TokenOutOfRange { token, categories: self.num_tokens() });
        }
        Ok(())
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.num_steps() {
            return Err(Error::TimestepOutOfRange { t, max: self.num_steps() });
        }
        Ok(())
    }

    /// Kernel carrying `x_from` to `x_to` (`from <= to`).
    pub(crate) fn span_kernel(&self, from: usize, to: usize) -> Kernel {
        Kernel::from_params(self.kind(), self.schedule.span_params(from, to))
    }

    /// Kernel of `q(x_t | x_0)`.
    pub(crate) fn cumulative_kernel(&self, t: usize) -> Kernel {
        let s = &self.schedule;
        Kernel::from_params(
            self.kind(),
            StepParams { alpha: s.alpha_bar()[t], beta: s.beta_bar()[t], gamma: s.gamma_bar()[t] },
        )
    }

    /// Probability of landing on `to` from `from` under `kernel`.
    pub(crate) fn kernel_prob(&self, kernel: Kernel, to: usize, from: usize) -> f64 {
        if self.is_mask(from) {
            return if to == from { 1.0 } else { 0.0 };
        }
        if self.is_mask(to) {
            return kernel.absorb;
        }
        kernel.spread + if to == from { kernel.stay } else { 0.0 }
    }

    pub(crate) fn kernel_column(&self, kernel: Kernel, from: usize) -> Vec<f64> {
        let n = self.num_categories();
        if self.is_mask(from) {
            let mut probs = vec![0.0; n];
            probs[from] = 1.0;
            return probs;
        }
        let mut probs = vec![kernel.spread; n];
        if let Some(mask) = self.mask_token() {
            probs[mask] = kernel.absorb;
        }
        probs[from] += kernel.stay;
        probs
    }

    /// Column of `Q_t` selecting `x_prev`: the distribution of `x_t` given `x_{t-1}`.
    pub fn step_distribution(&self, x_prev: usize, t: usize) -> Result<Categorical> {
        self.check_token(x_prev)?;
        if t == 0 {
            return Err(Error::TimestepOutOfRange { t, max: self.num_steps() });
        }
        self.check_t(t)?;
        Ok(Categorical::from_raw(self.kernel_column(self.span_kernel(t - 1, t), x_prev)))
    }

    /// Closed-form `q(x_t | x_0)`; `t = 0` is a point mass on `x0`.
    pub fn cumulative_distribution(&self, x0: usize, t: usize) -> Result<Categorical> {
        self.check_data_token(x0)?;
        self.check_t(t)?;
        Ok(Categorical::from_raw(self.kernel_column(self.cumulative_kernel(t), x0)))
    }

    /// Distribution of `x_to` given `x_from` for `from <= to`.
    pub fn span_distribution(&self, x_from: usize, from: usize, to: usize) -> Result<Categorical> {
        self.check_token(x_from)?;
        self.check_t(to)?;
        if from > to {
            return Err(Error::InvalidParameter(format!("span from {from} to {to} runs backwards")));
        }
        Ok(Categorical::from_raw(self.kernel_column(self.span_kernel(from, to), x_from)))
    }

    /// Explicit `Q_t` built entry by entry from the per-step parameters.
    pub fn dense_matrix(&self, t: usize) -> Result<DMatrix<f64>> {
        self.dense_matrix_with_limit(t, DENSE_ORACLE_LIMIT)
    }

    pub fn dense_matrix_with_limit(&self, t: usize, limit: usize) -> Result<DMatrix<f64>> {
        let n = self.num_categories();
        if n > limit {
            return Err(Error::OracleLimit { categories: n, limit });
        }
        let p = self.schedule.per_step_params(t)?;
        let k = self.num_tokens();
        let m = match self.kind() {
            MatrixKind::Uniform => DMatrix::from_fn(n, n, |i, j| {
                if i == j { p.alpha + p.beta } else { p.beta }
            }),
            MatrixKind::Mask => DMatrix::from_fn(n, n, |i, j| match (i == k, j == k) {
                (_, true) => f64::from(u8::from(i == k)),
                (true, false) => p.gamma,
                (false, false) => if i == j { p.beta } else { 0.0 },
            }),
            MatrixKind::MaskUniform => DMatrix::from_fn(n, n, |i, j| match (i == k, j == k) {
                (_, true) => f64::from(u8::from(i == k)),
                (true, false) => p.gamma,
                (false, false) => if i == j { p.alpha + p.beta } else { p.beta },
            }),
        };
        Ok(m)
    }

    /// Limiting distribution `p(x_T)` of a saturated schedule.
    pub fn stationary_distribution(&self) -> Result<Categorical> {
        if !self.schedule.is_saturated(SATURATION_TOLERANCE) {
            return Err(Error::NotSaturated(format!(
                "{} schedule keeps stay probability {} at T",
                self.kind(),
                match self.kind() {
                    MatrixKind::Mask => self.schedule.beta_bar()[self.num_steps()],
                    _ => self.schedule.alpha_bar()[self.num_steps()],
                }
            )));
        }
        let k = self.num_tokens();
        let probs = match self.kind() {
            MatrixKind::Uniform => vec![1.0 / k as f64; k],
            MatrixKind::Mask => {
                let mut p = vec![0.0; k + 1];
                p[k] = 1.0;
                p
            }
            MatrixKind::MaskUniform => {
                let gamma_end = self.schedule.gamma_bar()[self.num_steps()];
                let mut p = vec![(1.0 - gamma_end) / k as f64; k + 1];
                p[k] = gamma_end;
                p
            }
        };
        Ok(Categorical::from_raw(probs))
    }
}

/// JSON document for a dense matrix, stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrixDoc {
    pub layout: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for DenseMatrixDoc {
    fn from(m: &DMatrix<f64>) -> Self {
        // nalgebra storage is column-major already.
        Self { layout: "column-major".into(), rows: m.nrows(), cols: m.ncols(), data: m.as_slice().to_vec() }
    }
}

impl TryFrom<DenseMatrixDoc> for DMatrix<f64> {
    type Error = Error;

    fn try_from(doc: DenseMatrixDoc) -> Result<Self> {
        if doc.layout != "column-major" {
            return Err(Error::InvalidParameter(format!("unsupported layout `{}`", doc.layout)));
        }
        if doc.rows * doc.cols != doc.data.len() {
            return Err(Error::Shape(format!(
                "{}x{} matrix with {} entries",
                doc.rows,
                doc.cols,
                doc.data.len()
            )));
        }
        Ok(DMatrix::from_column_slice(doc.rows, doc.cols, &doc.data))
    }
}
