//! Linear noise schedules.
//!
//! A schedule stores the cumulative corruption parameters `alpha_bar`,
//! `beta_bar` and `gamma_bar` for every timestep `t = 0..=T`. Dense transition
//! matrices are never materialised here; everything downstream is computed
//! from these three arrays.
//!
//! Field meaning per kind:
//!
//! | kind         | `alpha_bar[t]`               | `beta_bar[t]`               | `gamma_bar[t]`         |
//! |--------------|------------------------------|-----------------------------|------------------------|
//! | Uniform      | stay probability             | `(1 - alpha_bar) / K`       | always 0               |
//! | Mask         | equal to `beta_bar`          | stay probability            | `1 - beta_bar`         |
//! | MaskUniform  | stay probability             | `(1 - alpha_bar - gamma_bar) / K` | mask probability |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used when re-checking kind constraints on deserialised schedules.
const CONSTRAINT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    Uniform,
    Mask,
    MaskUniform,
}

impl MatrixKind {
    pub const ALL: [MatrixKind; 3] = [MatrixKind::Uniform, MatrixKind::Mask, MatrixKind::MaskUniform];

    /// Whether the kind adds an absorbing mask token at index `K`.
    pub fn has_mask(self) -> bool {
        !matches!(self, MatrixKind::Uniform)
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixKind::Uniform => "uniform",
            MatrixKind::Mask => "mask",
            MatrixKind::MaskUniform => "mask-uniform",
        })
    }
}

impl FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MatrixKind::Uniform),
            "mask" => Ok(MatrixKind::Mask),
            "mask-uniform" | "mask_uniform" | "maskuniform" => Ok(MatrixKind::MaskUniform),
            other => Err(Error::InvalidParameter(format!("unknown matrix kind `{other}`"))),
        }
    }
}

/// End values (at `t = T`) of the linearly interpolated cumulative schedules.
///
/// `alpha_end` drives `alpha_bar` (Uniform, MaskUniform) and `gamma_end`
/// drives `gamma_bar` (Mask, MaskUniform). `beta_bar` is always derived from
/// the kind constraint. `None` selects the kind's default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTargets {
    pub alpha_end: Option<f64>,
    pub gamma_end: Option<f64>,
}

impl ScheduleTargets {
    pub fn uniform(alpha_end: f64) -> Self {
        Self { alpha_end: Some(alpha_end), gamma_end: None }
    }

    pub fn mask(gamma_end: f64) -> Self {
        Self { alpha_end: None, gamma_end: Some(gamma_end) }
    }

    pub fn mask_uniform(alpha_end: f64, gamma_end: f64) -> Self {
        Self { alpha_end: Some(alpha_end), gamma_end: Some(gamma_end) }
    }

    /// Resolves defaults: full corruption (`alpha_end = 0`, mask `gamma_end = 1`,
    /// mask+uniform `gamma_end = 0.9`).
    fn resolve(self, kind: MatrixKind) -> Result<(f64, f64)> {
        let check = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")))
            } else {
                Ok(v)
            }
        };
        match kind {
            MatrixKind::Uniform => {
                if self.gamma_end.is_some_and(|g| g != 0.0) {
                    return Err(Error::InvalidParameter(
                        "uniform schedules have no mask probability".into(),
                    ));
                }
                Ok((check("alpha_end", self.alpha_end.unwrap_or(0.0))?, 0.0))
            }
            MatrixKind::Mask => {
                if self.alpha_end.is_some() {
                    return Err(Error::InvalidParameter(
                        "mask schedules are driven by gamma_end only".into(),
                    ));
                }
                let gamma = check("gamma_end", self.gamma_end.unwrap_or(1.0))?;
                Ok((1.0 - gamma, gamma))
            }
            MatrixKind::MaskUniform => {
                let alpha = check("alpha_end", self.alpha_end.unwrap_or(0.0))?;
                let gamma = check("gamma_end", self.gamma_end.unwrap_or(0.9))?;
                if alpha + gamma > 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "alpha_end + gamma_end = {} exceeds 1",
                        alpha + gamma
                    )));
                }
                Ok((alpha, gamma))
            }
        }
    }
}

/// Per-step (or composite multi-step) kernel parameters.
///
/// For Mask kind `beta` is the stay probability and `alpha == beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSchedule {
    kind: MatrixKind,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "T")]
    t: usize,
    alpha_bar: Vec<f64>,
    gamma_bar: Vec<f64>,
    beta_bar: Vec<f64>,
}

fn lerp(start: f64, end: f64, s: f64) -> f64 {
    (1.0 - s) * start + s * end
}

/// `cur / prev` for monotone cumulative products; a zero numerator never divides.
fn ratio(cur: f64, prev: f64) -> Option<f64> {
    if cur == 0.0 {
        Some(0.0)
    } else if prev == 0.0 {
        None
    } else {
        Some((cur / prev).min(1.0))
    }
}

/// Builds a schedule whose driving cumulative parameters move linearly from
/// their `t = 0` anchors to `targets` at `t = T`.
pub fn build_linear_schedule(
    kind: MatrixKind,
    k: usize,
    t_max: usize,
    targets: ScheduleTargets,
) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    if k < 2 {
        return Err(Error::InvalidParameter(format!("K must be at least 2, got {k}")));
    }
    let (alpha_end, gamma_end) = targets.resolve(kind)?;
    let kf = k as f64;
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    let mut gamma_bar = Vec::with_capacity(t_max + 1);
    let mut beta_bar = Vec::with_capacity(t_max + 1);
    for step in 0..=t_max {
        let s = step as f64 / t_max as f64;
        match kind {
            MatrixKind::Uniform => {
                let a = lerp(1.0, alpha_end, s);
                alpha_bar.push(a);
                gamma_bar.push(0.0);
                beta_bar.push((1.0 - a) / kf);
            }
            MatrixKind::Mask => {
                let g = lerp(0.0, gamma_end, s);
                let stay = 1.0 - g;
                alpha_bar.push(stay);
                gamma_bar.push(g);
                beta_bar.push(stay);
            }
            MatrixKind::MaskUniform => {
                let a = lerp(1.0, alpha_end, s);
                let g = lerp(0.0, gamma_end, s);
                alpha_bar.push(a);
                gamma_bar.push(g);
                beta_bar.push(((1.0 - a - g) / kf).max(0.0));
            }
        }
    }
    let schedule = NoiseSchedule { kind, k, t: t_max, alpha_bar, gamma_bar, beta_bar };
    schedule.validate()?;
    Ok(schedule)
}

impl NoiseSchedule {
    /// Schedule with the kind's default end values.
    pub fn linear(kind: MatrixKind, k: usize, t_max: usize) -> Result<Self> {
        build_linear_schedule(kind, k, t_max, ScheduleTargets::default())
    }

    /// Builds a schedule from explicit cumulative arrays (length `T + 1`).
    ///
    /// For Uniform `gamma_bar` must be all zero; for Mask `alpha_bar` is ignored
    /// and recomputed from `gamma_bar`. `beta_bar` is always derived.
    pub fn from_cumulative(
        kind: MatrixKind,
        k: usize,
        alpha_bar: Vec<f64>,
        gamma_bar: Vec<f64>,
    ) -> Result<Self> {
        if alpha_bar.len() != gamma_bar.len() || alpha_bar.len() < 2 {
            return Err(Error::Shape("cumulative arrays must share a length of at least 2".into()));
        }
        if k < 2 {
            return Err(Error::InvalidParameter(format!("K must be at least 2, got {k}")));
        }
        let kf = k as f64;
        let t_max = alpha_bar.len() - 1;
        let (alpha_bar, beta_bar) = match kind {
            MatrixKind::Uniform => {
                let beta = alpha_bar.iter().map(|a| (1.0 - a) / kf).collect();
                (alpha_bar, beta)
            }
            MatrixKind::Mask => {
                let stay: Vec<f64> = gamma_bar.iter().map(|g| 1.0 - g).collect();
                (stay.clone(), stay)
            }
            MatrixKind::MaskUniform => {
                let beta = alpha_bar
                    .iter()
                    .zip(&gamma_bar)
                    .map(|(a, g)| {
                        let b = (1.0 - a - g) / kf;
                        if b < 0.0 && b > -CONSTRAINT_TOLERANCE { 0.0 } else { b }
                    })
                    .collect();
                (alpha_bar, beta)
            }
        };
        let schedule = NoiseSchedule { kind, k, t: t_max, alpha_bar, gamma_bar, beta_bar };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<()> {
        let n = self.t + 1;
        if self.t == 0 || self.k < 2 {
            return Err(Error::InvalidParameter("need T >= 1 and K >= 2".into()));
        }
        if self.alpha_bar.len() != n || self.gamma_bar.len() != n || self.beta_bar.len() != n {
            return Err(Error::Shape(format!("cumulative arrays must have length T + 1 = {n}")));
        }
        if self.alpha_bar[0] != 1.0 || self.gamma_bar[0] != 0.0 {
            return Err(Error::InvalidParameter("alpha_bar[0] must be 1 and gamma_bar[0] 0".into()));
        }
        let all = self.alpha_bar.iter().chain(&self.gamma_bar).chain(&self.beta_bar);
        for v in all {
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidParameter(format!("cumulative value {v} outside [0, 1]")));
            }
        }
        for t in 1..n {
            if self.alpha_bar[t] > self.alpha_bar[t - 1] {
                return Err(Error::InvalidParameter(format!("alpha_bar increases at t = {t}")));
            }
            if self.gamma_bar[t] < self.gamma_bar[t - 1] {
                return Err(Error::InvalidParameter(format!("gamma_bar decreases at t = {t}")));
            }
        }
        let kf = self.k as f64;
        for t in 0..n {
            let (a, b, g) = (self.alpha_bar[t], self.beta_bar[t], self.gamma_bar[t]);
            let violation = match self.kind {
                MatrixKind::Uniform if g != 0.0 => f64::INFINITY,
                MatrixKind::Uniform => (kf * b - (1.0 - a)).abs(),
                MatrixKind::Mask => (g - (1.0 - b)).abs().max((a - b).abs()),
                MatrixKind::MaskUniform => (b - (1.0 - a - g) / kf).abs(),
            };
            if violation > CONSTRAINT_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "{} kind constraint violated at t = {t}",
                    self.kind
                )));
            }
        }
        // Composite kernels must stay stochastic.
        if self.kind == MatrixKind::MaskUniform {
            for t in 1..n {
                let p = self.span_params(t - 1, t);
                if p.beta < -CONSTRAINT_TOLERANCE {
                    return Err(Error::InvalidParameter(format!(
                        "per-step uniform mass negative at t = {t}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    /// Number of data tokens `K` (mask excluded).
    pub fn num_tokens(&self) -> usize {
        self.k
    }

    /// Number of timesteps `T`.
    pub fn num_steps(&self) -> usize {
        self.t
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta_bar(&self) -> &[f64] {
        &self.beta_bar
    }

    pub fn gamma_bar(&self) -> &[f64] {
        &self.gamma_bar
    }

    /// Cumulative parameters at `t` packed as a [`StepParams`].
    pub fn cumulative(&self, t: usize) -> Result<StepParams> {
        self.check_t(t)?;
        Ok(StepParams { alpha: self.alpha_bar[t], beta: self.beta_bar[t], gamma: self.gamma_bar[t] })
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.t {
            return Err(Error::TimestepOutOfRange { t, max: self.t });
        }
        Ok(())
    }

    /// Per-step parameters at `t` (`1 <= t <= T`), recovered from the ratios
    /// of consecutive cumulative values.
    pub fn per_step_params(&self, t: usize) -> Result<StepParams> {
        if t == 0 {
            return Err(Error::TimestepOutOfRange { t, max: self.t });
        }
        self.check_t(t)?;
        let uses_alpha = matches!(self.kind, MatrixKind::Uniform | MatrixKind::MaskUniform);
        if uses_alpha && self.alpha_bar[t - 1] == 0.0 {
            return Err(Error::Saturated { t, detail: "alpha_bar already 0".into() });
        }
        if self.kind.has_mask() && self.gamma_bar[t - 1] == 1.0 {
            return Err(Error::Saturated { t, detail: "gamma_bar already 1".into() });
        }
        Ok(self.span_params(t - 1, t))
    }

    /// Parameters of the composite kernel carrying `x_from` to `x_to`
    /// (`from <= to`), i.e. the product `Q_to ... Q_{from+1}`.
    ///
    /// Where a cumulative quantity has already saturated at `from` the
    /// composite is taken to be fully mixing, which is the only value
    /// consistent with the saturated state.
    pub fn span_params(&self, from: usize, to: usize) -> StepParams {
        debug_assert!(from <= to && to <= self.t);
        let kf = self.k as f64;
        let alpha = ratio(self.alpha_bar[to], self.alpha_bar[from]).unwrap_or(0.0);
        let survive = ratio(1.0 - self.gamma_bar[to], 1.0 - self.gamma_bar[from]).unwrap_or(0.0);
        let gamma = 1.0 - survive;
        match self.kind {
            MatrixKind::Uniform => StepParams { alpha, beta: (1.0 - alpha) / kf, gamma: 0.0 },
            MatrixKind::Mask => StepParams { alpha: survive, beta: survive, gamma },
            MatrixKind::MaskUniform => {
                let beta = ((survive - alpha) / kf).max(0.0);
                StepParams { alpha: alpha.min(survive), beta, gamma }
            }
        }
    }

    /// Whether the forward chain reaches its stationary form at `T` within `tol`.
    pub fn is_saturated(&self, tol: f64) -> bool {
        match self.kind {
            MatrixKind::Uniform | MatrixKind::MaskUniform => self.alpha_bar[self.t] <= tol,
            MatrixKind::Mask => self.beta_bar[self.t] <= tol,
        }
    }
}

#[derive(Deserialize)]
struct ScheduleDoc {
    kind: MatrixKind,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "T")]
    t: usize,
    alpha_bar: Vec<f64>,
    gamma_bar: Vec<f64>,
    beta_bar: Vec<f64>,
}

impl<'de> Deserialize<'de> for NoiseSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = ScheduleDoc::deserialize(deserializer)?;
        let schedule = NoiseSchedule {
            kind: doc.kind,
            k: doc.k,
            t: doc.t,
            alpha_bar: doc.alpha_bar,
            gamma_bar: doc.gamma_bar,
            beta_bar: doc.beta_bar,
        };
        schedule.validate().map_err(serde::de::Error::custom)?;
        Ok(schedule)
    }
}
