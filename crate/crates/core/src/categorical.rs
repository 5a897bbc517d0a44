//! Probability vectors over token categories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on the total mass of a categorical distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over `len()` categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates that `probs` is nonnegative, finite and sums to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("categorical over zero categories".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidParameter(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes a nonnegative weight vector.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        Ok(Self { probs: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn one_hot(categories: usize, index: usize) -> Self {
        assert!(index < categories, "one-hot index out of range");
        let mut probs = vec![0.0; categories];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn uniform(categories: usize) -> Self {
        assert!(categories > 0);
        Self { probs: vec![1.0 / categories as f64; categories] }
    }

    // Callers guarantee normalization (closed-form kernels).
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(
            (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6,
            "unnormalized categorical: {probs:?}"
        );
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// Inverse-CDF draw. Zero-probability categories are never returned.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }

    /// Half the L1 distance.
    pub fn total_variation(&self, other: &Categorical) -> f64 {
        assert_eq!(self.len(), other.len(), "total variation across different supports");
        0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// `KL(self || other)`; infinite when `other` misses mass that `self` has.
    pub fn kl_divergence(&self, other: &Categorical) -> f64 {
        kl_divergence(&self.probs, &other.probs)
    }
}

impl<'de> Deserialize<'de> for Categorical {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(deserializer)?;
        Categorical::new(probs).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            kl += pi * (pi / qi).ln();
        }
    }
    kl
}
