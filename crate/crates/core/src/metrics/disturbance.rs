use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fid, kl_score, FeatureSet, ProbSet};
use crate::{Error, Result};

/// How the synthetic "generated" set is degraded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disturbance {
    /// Additive Gaussian noise with standard deviation `level`.
    Noise,
    /// Each feature entry is zeroed with probability `level`.
    Mask,
    /// An interfering signal scaled by `level` is added.
    Mix,
}

impl std::str::FromStr for Disturbance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Self::Noise),
            "mask" => Ok(Self::Mask),
            "mix" => Ok(Self::Mix),
            other => Err(Error::InvalidParameter(format!("unknown disturbance {other:?}"))),
        }
    }
}

/// Gaussian feature generator with a fixed linear-softmax classifier that
/// stands in for a pretrained audio classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFeatures {
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
}

impl Default for SyntheticFeatures {
    fn default() -> Self {
        Self { samples: 2000, dim: 8, classes: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceScore {
    pub level: f64,
    pub fid: f64,
    pub kl: f64,
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn classify(features: &DMatrix<f64>, weights: &DMatrix<f64>) -> Result<ProbSet> {
    let mut logits = features * weights;
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let total = row.sum();
        row /= total;
    }
    ProbSet::new(logits)
}

/// Scores a disturbed copy of a synthetic reference set at each level.
///
/// Every level reuses the same random draws (noise, mask thresholds,
/// interferer), so larger levels strictly extend smaller ones and level 0
/// reproduces the reference exactly.
pub fn disturbance_suite<R: Rng + ?Sized>(
    base: &SyntheticFeatures,
    kind: Disturbance,
    levels: &[f64],
    rng: &mut R,
) -> Result<Vec<DisturbanceScore>> {
    if levels.len() < 2 {
        return Err(Error::InvalidParameter("need at least two levels".into()));
    }
    if levels[0] != 0.0 {
        return Err(Error::InvalidParameter("levels must start at 0".into()));
    }
    if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("levels must be finite and strictly ascending".into()));
    }
    if kind == Disturbance::Mask && levels.iter().any(|&l| l > 1.0) {
        return Err(Error::InvalidParameter("mask levels are fractions in [0, 1]".into()));
    }
    let (n, d) = (base.samples, base.dim);

    let mean = DMatrix::from_fn(1, d, |_, _| rng.random_range(1.0..3.0));
    let mixing = gaussian(d, d, rng) / (d as f64).sqrt();
    let mut reference = gaussian(n, d, rng) * mixing.transpose();
    for mut row in reference.row_iter_mut() {
        row += &mean;
    }
    let classifier = gaussian(d, base.classes, rng);
    let real_feats = FeatureSet::new(reference.clone())?;
    let real_probs = classify(&reference, &classifier)?;

    let noise = gaussian(n, d, rng);
    let thresholds = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
    let interferer_mean = DMatrix::from_fn(1, d, |_, _| rng.random_range(-2.0..2.0));
    let mut interferer = gaussian(n, d, rng) * 1.5;
    for mut row in interferer.row_iter_mut() {
        row += &interferer_mean;
    }

    levels
        .iter()
        .map(|&level| {
            let disturbed = match kind {
                Disturbance::Noise => &reference + &noise * level,
                Disturbance::Mask => reference.zip_map(&thresholds, |x, u| if u < level { 0.0 } else { x }),
                Disturbance::Mix => &reference + &interferer * level,
            };
            let fake_probs = classify(&disturbed, &classifier)?;
            Ok(DisturbanceScore {
                level,
                fid: fid(&real_feats, &FeatureSet::new(disturbed)?)?.value,
                kl: kl_score(&real_probs, &fake_probs)?,
            })
        })
        .collect()
}
