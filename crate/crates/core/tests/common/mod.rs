//! Brute-force reference computations shared by the integration tests.
//!
//! Everything here works from the raw cumulative arrays of a schedule and
//! explicit matrices, never from the library's closed forms.

#![allow(dead_code)]

use std::collections::HashMap;

use diffcore::diffusion::TokenSequence;
use diffcore::{MatrixKind, NoiseSchedule, TransitionModel};
use nalgebra::DMatrix;

/// `Q_t` assembled from consecutive cumulative values.
pub fn step_matrix(schedule: &NoiseSchedule, t: usize) -> DMatrix<f64> {
    let k = schedule.num_tokens();
    let (a, g) = (schedule.alpha_bar(), schedule.gamma_bar());
    let alpha = if a[t] == 0.0 { 0.0 } else { a[t] / a[t - 1] };
    let gamma = if g[t] == 1.0 { 1.0 } else { 1.0 - (1.0 - g[t]) / (1.0 - g[t - 1]) };
    match schedule.kind() {
        MatrixKind::Uniform => {
            let beta = (1.0 - alpha) / k as f64;
            DMatrix::from_fn(k, k, |i, j| beta + if i == j { alpha } else { 0.0 })
        }
        MatrixKind::Mask => DMatrix::from_fn(k + 1, k + 1, |i, j| {
            if j == k {
                if i == k { 1.0 } else { 0.0 }
            } else if i == k {
                gamma
            } else if i == j {
                1.0 - gamma
            } else {
                0.0
            }
        }),
        MatrixKind::MaskUniform => {
            let beta = (1.0 - alpha - gamma) / k as f64;
            DMatrix::from_fn(k + 1, k + 1, |i, j| {
                if j == k {
                    if i == k { 1.0 } else { 0.0 }
                } else if i == k {
                    gamma
                } else {
                    beta + if i == j { alpha } else { 0.0 }
                }
            })
        }
    }
}

/// `Qbar[t] = Q_t ... Q_1`, with `Qbar[0] = I`.
pub fn cumulative_products(schedule: &NoiseSchedule) -> Vec<DMatrix<f64>> {
    let n = categories(schedule);
    let mut out = vec![DMatrix::identity(n, n)];
    for t in 1..=schedule.num_steps() {
        let next = step_matrix(schedule, t) * &out[t - 1];
        out.push(next);
    }
    out
}

pub fn categories(schedule: &NoiseSchedule) -> usize {
    schedule.num_tokens() + usize::from(schedule.kind().has_mask())
}

/// Dense chain oracle for one model.
pub struct DenseChain {
    pub steps: Vec<DMatrix<f64>>,
    pub cumulative: Vec<DMatrix<f64>>,
}

impl DenseChain {
    pub fn new(schedule: &NoiseSchedule) -> Self {
        let mut steps = vec![DMatrix::identity(categories(schedule), categories(schedule))];
        steps.extend((1..=schedule.num_steps()).map(|t| step_matrix(schedule, t)));
        Self { steps, cumulative: cumulative_products(schedule) }
    }

    /// Product `Q_t ... Q_{s+1}`.
    pub fn span(&self, s: usize, t: usize) -> DMatrix<f64> {
        let n = self.steps[0].nrows();
        let mut m = DMatrix::identity(n, n);
        for u in s + 1..=t {
            m = &self.steps[u] * m;
        }
        m
    }

    /// Bayes posterior `q(x_s | x_t, x0)` via explicit products; `None` when
    /// the evidence vanishes.
    pub fn posterior(&self, x_t: usize, x0: usize, t: usize, s: usize) -> Option<Vec<f64>> {
        let span = self.span(s, t);
        let evidence = self.cumulative[t][(x_t, x0)];
        if evidence <= 0.0 {
            return None;
        }
        Some(
            (0..span.ncols())
                .map(|x_s| span[(x_t, x_s)] * self.cumulative[s][(x_s, x0)] / evidence)
                .collect(),
        )
    }

    /// `sum_x0 q(x_s | x_t, x0) p(x0)` over the consistent `x0`, weights
    /// renormalised over them.
    pub fn reverse(&self, prediction: &[f64], x_t: usize, t: usize, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.steps[0].nrows()];
        let mut total = 0.0;
        let mut consistent = 0;
        for (x0, &w) in prediction.iter().enumerate() {
            if let Some(post) = self.posterior(x_t, x0, t, s) {
                consistent += 1;
                total += w;
                for (o, p) in out.iter_mut().zip(post) {
                    *o += w * p;
                }
            }
        }
        if total > 0.0 {
            out.iter_mut().for_each(|o| *o /= total);
        } else {
            for (x0, _) in prediction.iter().enumerate() {
                if let Some(post) = self.posterior(x_t, x0, t, s) {
                    for (o, p) in out.iter_mut().zip(post) {
                        *o += p / consistent as f64;
                    }
                }
            }
        }
        out
    }
}

pub fn model(kind: MatrixKind, k: usize, t: usize) -> TransitionModel {
    TransitionModel::new(NoiseSchedule::linear(kind, k, t).unwrap())
}

/// Total variation between an empirical histogram and a reference distribution.
pub fn empirical_tv(samples: &[TokenSequence], reference: &[(TokenSequence, f64)]) -> f64 {
    let mut counts: HashMap<&TokenSequence, f64> = HashMap::new();
    for s in samples {
        *counts.entry(s).or_default() += 1.0;
    }
    let n = samples.len() as f64;
    let mut tv = 0.0;
    for (seq, p) in reference {
        tv += (counts.remove(seq).unwrap_or(0.0) / n - p).abs();
    }
    tv += counts.values().map(|c| c / n).sum::<f64>();
    tv / 2.0
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}
