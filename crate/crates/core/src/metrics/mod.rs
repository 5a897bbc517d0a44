//! FID, paired KL score and disturbance sensitivity sweeps.

mod disturbance;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::categorical::SUM_TOLERANCE;
use crate::{Error, Result};

pub use disturbance::{disturbance_suite, Disturbance, DisturbanceScore, SyntheticFeatures};

/// Smoothing floor applied to the second argument of the KL score.
pub const KL_EPSILON: f64 = 1e-10;
/// Ridge added to covariances estimated from no more samples than dimensions.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
/// Negative FID values down to this are rounding noise and clamp to 0.
const FID_NEGATIVE_TOLERANCE: f64 = 1e-6;

/// `N x d` matrix of feature vectors, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: DMatrix<f64>,
}

impl FeatureSet {
    pub fn new(features: DMatrix<f64>) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::Shape("features have dimension 0".into()));
        }
        if features.nrows() < 2 {
            return Err(Error::Shape(format!("need at least 2 samples, got {}", features.nrows())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature value".into()));
        }
        Ok(Self { features })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("feature rows differ in length".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.features
    }

    fn mean(&self) -> DVector<f64> {
        self.features.row_mean().transpose()
    }

    /// Unbiased sample covariance, ridged when `N <= d`.
    fn covariance(&self) -> (DMatrix<f64>, bool) {
        let mean = self.features.row_mean();
        let mut centered = self.features.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let mut cov = centered.transpose() * &centered / (self.len() - 1) as f64;
        let ridged = self.len() <= self.dim();
        if ridged {
            cov += DMatrix::identity(self.dim(), self.dim()) * COVARIANCE_RIDGE;
        }
        (cov, ridged)
    }
}

/// `N x C` matrix of per-sample class distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSet {
    probs: DMatrix<f64>,
}

impl ProbSet {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Shape("empty probability set".into()));
        }
        for (i, row) in probs.row_iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidParameter(format!("row {i} has an invalid probability")));
            }
            let total = row.sum();
            if (total - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!("row {i} sums to {total}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("probability rows differ in length".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub value: f64,
    /// Whether either covariance needed the small-sample ridge.
    pub regularized: bool,
}

fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Fréchet distance between Gaussian fits of two feature sets.
///
/// `Tr((C_r C_f)^{1/2})` is evaluated as the trace of the PSD square root of
/// `C_r^{1/2} C_f C_r^{1/2}`, which has the same eigenvalues but stays
/// symmetric.
pub fn fid(real: &FeatureSet, fake: &FeatureSet) -> Result<FidReport> {
    if real.dim() != fake.dim() {
        return Err(Error::Shape(format!("feature dimensions {} and {}", real.dim(), fake.dim())));
    }
    let diff = real.mean() - fake.mean();
    let (c_r, reg_r) = real.covariance();
    let (c_f, reg_f) = fake.covariance();
    let root_r = psd_sqrt(symmetrize(&c_r));
    let inner = symmetrize(&(&root_r * &c_f * &root_r));
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = diff.norm_squared() + c_r.trace() + c_f.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::NonFinite("fid".into()));
    }
    if value < -FID_NEGATIVE_TOLERANCE {
        log::warn!("fid evaluated to {value}; clamping to 0");
    }
    Ok(FidReport { value: value.max(0.0), regularized: reg_r || reg_f })
}

/// Mean over paired rows of `KL(real_i || max(fake_i, eps))`.
pub fn kl_score(real: &ProbSet, fake: &ProbSet) -> Result<f64> {
    if real.len() != fake.len() || real.classes() != fake.classes() {
        return Err(Error::Shape(format!(
            "{}x{} real vs {}x{} fake probabilities",
            real.len(),
            real.classes(),
            fake.len(),
            fake.classes()
        )));
    }
    let mut total = 0.0;
    for (p_row, q_row) in real.probs.row_iter().zip(fake.probs.row_iter()) {
        for (&p, &q) in p_row.iter().zip(q_row.iter()) {
            if p > 0.0 {
                total += p * (p / q.max(KL_EPSILON)).ln();
            }
        }
    }
    Ok((total / real.len() as f64).max(0.0))
}
