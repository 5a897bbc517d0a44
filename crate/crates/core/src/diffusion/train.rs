use std::io::{self, Write};

use rand::Rng;

use super::forward::{forward_sample, posterior_probs};
use super::loss::{aux_loss, step_kl, total_loss, LossReport, DEFAULT_LAMBDA};
use super::reverse::PositionMixture;
use super::{Condition, TokenSequence};
use crate::denoiser::{LogitTensor, TabularDenoiser};
use crate::transition::TransitionModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1, lambda: DEFAULT_LAMBDA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_vlb: f64,
    pub mean_aux: f64,
    pub mean_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochLoss>,
}

impl TrainTrace {
    /// CSV with header `epoch,mean_vlb,mean_aux,mean_total`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "epoch,mean_vlb,mean_aux,mean_total")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.mean_vlb, e.mean_aux, e.mean_total)?;
        }
        Ok(())
    }
}

fn check_shapes(model: &TransitionModel, den: &TabularDenoiser) -> Result<()> {
    if den.num_steps() != model.num_steps()
        || den.num_categories() != model.num_categories()
        || den.num_tokens() != model.num_tokens()
    {
        return Err(Error::Shape(format!(
            "table [{}, {}, {}] does not match model (T = {}, {} categories, K = {})",
            den.num_steps(),
            den.num_categories(),
            den.num_tokens(),
            model.num_steps(),
            model.num_categories(),
            model.num_tokens()
        )));
    }
    Ok(())
}

/// Training loss at a sampled `(t, x_t)`: the KL term at `t` plus
/// `lambda` times the auxiliary x0 loss.
pub fn sample_loss(
    model: &TransitionModel,
    den: &TabularDenoiser,
    x0: &TokenSequence,
    x_t: &TokenSequence,
    t: usize,
    cond: Condition,
    lambda: f64,
) -> Result<LossReport> {
    check_shapes(model, den)?;
    let output = den.tabular_predict(x_t, t, cond)?.output;
    let vlb = step_kl(model, &output, x_t, x0, t)?;
    let aux = aux_loss(&output, x0)?;
    Ok(total_loss(vlb, aux, lambda))
}

/// [`sample_loss`] together with its analytic gradient w.r.t. the logits.
pub fn loss_and_gradient(
    model: &TransitionModel,
    den: &TabularDenoiser,
    x0: &TokenSequence,
    x_t: &TokenSequence,
    t: usize,
    cond: Condition,
    lambda: f64,
) -> Result<(LossReport, LogitTensor)> {
    check_shapes(model, den)?;
    if cond.0 >= den.num_conditions() {
        return Err(Error::InvalidParameter(format!("condition {} has no table", cond.0)));
    }
    if x0.len() != x_t.len() {
        return Err(Error::Shape("x0 and x_t lengths differ".into()));
    }
    let output = den.tabular_predict(x_t, t, cond)?.output;
    let k = model.num_tokens();
    let n = x0.len() as f64;
    let mut grad = den.zero_gradient();
    let mut vlb = 0.0;
    for (i, (&obs, &clean)) in x_t.tokens().iter().zip(x0.tokens()).enumerate() {
        let p = output.row(i);
        let q = posterior_probs(model, obs, clean, t, t - 1)
            .ok_or(Error::InconsistentPair { x_t: obs, x0: clean, t })?;
        let mix = PositionMixture::build(model, p, obs, t, t - 1)?;
        let m = mix.mixture();
        vlb += crate::categorical::kl_divergence(&q, &m);

        // dL/dp for the vlb term; zero when the renormalisation fell back to uniform.
        let mut d_p = vec![0.0; k];
        if mix.weight_total > 0.0 {
            let weights = mix.weights();
            let g: Vec<f64> = mix
                .vertices
                .iter()
                .map(|v| {
                    -q.iter()
                        .zip(v)
                        .zip(&m)
                        .filter(|((qs, _), _)| **qs > 0.0)
                        .map(|((qs, vs), ms)| qs * vs / ms)
                        .sum::<f64>()
                })
                .collect();
            let mean_g: f64 = weights.iter().zip(&g).map(|(w, gj)| w * gj).sum();
            for (&cand, gj) in mix.candidates.iter().zip(&g) {
                d_p[cand] = (gj - mean_g) / mix.weight_total;
            }
        }
        d_p[clean] -= lambda / (n * p[clean]);

        // softmax backward
        let dot: f64 = p.iter().zip(&d_p).map(|(a, b)| a * b).sum();
        let row = grad.row_mut(cond.0, t, obs);
        for j in 0..k {
            row[j] += p[j] * (d_p[j] - dot);
        }
    }
    let aux = aux_loss(&output, x0)?;
    Ok((total_loss(vlb, aux, lambda), grad))
}

/// Central-difference gradient of [`sample_loss`] with step `h`. Only the
/// rows selected by `(cond, t, x_t[i])` can have nonzero entries, so only
/// those are perturbed.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_gradient(
    model: &TransitionModel,
    den: &TabularDenoiser,
    x0: &TokenSequence,
    x_t: &TokenSequence,
    t: usize,
    cond: Condition,
    lambda: f64,
    h: f64,
) -> Result<LogitTensor> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidParameter(format!("step {h} must be positive")));
    }
    // validates t, cond and shapes before indexing the table
    sample_loss(model, den, x0, x_t, t, cond, lambda)?;
    let mut rows: Vec<usize> = Vec::new();
    for &obs in x_t.tokens() {
        let offset = den.logits().row_offset(cond.0, t, obs);
        if !rows.contains(&offset) {
            rows.push(offset);
        }
    }
    let mut grad = den.zero_gradient();
    let mut probe = den.clone();
    for offset in rows {
        for idx in offset..offset + model.num_tokens() {
            let orig = probe.logits().data[idx];
            probe.logits_mut().data[idx] = orig + h;
            let plus = sample_loss(model, &probe, x0, x_t, t, cond, lambda)?.total;
            probe.logits_mut().data[idx] = orig - h;
            let minus = sample_loss(model, &probe, x0, x_t, t, cond, lambda)?.total;
            probe.logits_mut().data[idx] = orig;
            grad.data[idx] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Gradient-descent training: each epoch visits every example once, draws
/// `t ~ U{1..T}` and `x_t ~ q(x_t | x0)`, and applies one update.
///
/// A non-finite loss aborts with [`Error::Diverged`] carrying the epochs
/// completed so far.
pub fn train<R: Rng + ?Sized>(
    model: &TransitionModel,
    den: &mut TabularDenoiser,
    dataset: &[(Condition, TokenSequence)],
    config: TrainConfig,
    rng: &mut R,
) -> Result<TrainTrace> {
    check_shapes(model, den)?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    for (cond, x0) in dataset {
        if cond.0 >= den.num_conditions() {
            return Err(Error::InvalidParameter(format!("condition {} has no table", cond.0)));
        }
        for &x in x0.tokens() {
            model.check_data_token(x)?;
        }
    }
    let mut trace = TrainTrace::default();
    for epoch in 1..=config.epochs {
        let (mut vlb, mut aux, mut total) = (0.0, 0.0, 0.0);
        for (cond, x0) in dataset {
            let t = rng.random_range(1..=model.num_steps());
            let x_t = forward_sample(model, x0, t, rng)?;
            let (report, grad) = loss_and_gradient(model, den, x0, &x_t, t, *cond, config.lambda)?;
            if !report.total.is_finite() {
                return Err(Error::Diverged { epoch, trace: trace.epochs });
            }
            den.tabular_update(&grad)?;
            vlb += report.vlb;
            aux += report.aux;
            total += report.total;
        }
        let count = dataset.len() as f64;
        trace.epochs.push(EpochLoss {
            epoch,
            mean_vlb: vlb / count,
            mean_aux: aux / count,
            mean_total: total / count,
        });
    }
    Ok(trace)
}
