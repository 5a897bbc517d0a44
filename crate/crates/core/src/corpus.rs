//! Mask-based caption generation, curriculum splitting and synthetic
//! token datasets.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Condition, TokenSequence};
use crate::{seeded_rng, Error, Result};

pub const MASK_MARKER: &str = "[MASK]";

/// A clip and its ordered event labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenSequence>,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::InvalidParameter(format!("record {:?} has no labels", self.id)));
        }
        if self.labels.iter().any(|l| l.trim().is_empty()) {
            return Err(Error::InvalidParameter(format!("record {:?} has an empty label", self.id)));
        }
        Ok(())
    }
}

/// Labels interleaved with [`MASK_MARKER`] entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedText {
    pub tokens: Vec<String>,
}

impl fmt::Display for MaskedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

/// Surrounds every label with one or two masks on each side. The counts are
/// drawn independently per side and per label, so adjacent labels are
/// separated by two to four masks.
pub fn mbtg<S: AsRef<str>, R: Rng + ?Sized>(labels: &[S], rng: &mut R) -> Result<MaskedText> {
    if labels.is_empty() {
        return Err(Error::InvalidParameter("mbtg needs at least one label".into()));
    }
    let mut tokens = Vec::new();
    for label in labels {
        let label = label.as_ref();
        if label.trim().is_empty() {
            return Err(Error::InvalidParameter("empty label".into()));
        }
        let left = rng.random_range(1..=2);
        let right = rng.random_range(1..=2);
        tokens.extend(std::iter::repeat_n(MASK_MARKER.to_string(), left));
        tokens.push(label.to_string());
        tokens.extend(std::iter::repeat_n(MASK_MARKER.to_string(), right));
    }
    Ok(MaskedText { tokens })
}

/// Splits records into single-event (exactly one label) and multi-event
/// subsets, keeping input order within each.
pub fn curriculum_split(records: &[ClipRecord]) -> (Vec<ClipRecord>, Vec<ClipRecord>) {
    records.iter().cloned().partition(|r| r.labels.len() == 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Ses,
    Mes,
}

/// One pass over a subset; `epoch` counts from 1 within the subset's phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanPass {
    pub epoch: usize,
    pub subset: Subset,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub passes: Vec<PlanPass>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// `n` passes over the single-event set followed by `2n` over the
/// multi-event set. An empty subset contributes no passes and a warning.
pub fn curriculum_order(ses: &[ClipRecord], mes: &[ClipRecord], n: usize) -> Result<TrainingPlan> {
    if n == 0 {
        return Err(Error::InvalidParameter("curriculum needs n >= 1".into()));
    }
    let mut plan = TrainingPlan::default();
    if ses.is_empty() {
        log::warn!("single-event set is empty; plan covers the multi-event set only");
        plan.warnings.push("empty single-event set".into());
    } else {
        plan.passes.extend((1..=n).map(|epoch| PlanPass { epoch, subset: Subset::Ses }));
    }
    if mes.is_empty() {
        log::warn!("multi-event set is empty; plan covers the single-event set only");
        plan.warnings.push("empty multi-event set".into());
    } else {
        plan.passes.extend((1..=2 * n).map(|epoch| PlanPass { epoch, subset: Subset::Mes }));
    }
    Ok(plan)
}

/// A dataset sequence with its probability under its condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedExample {
    pub condition: Condition,
    pub tokens: TokenSequence,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub num_conditions: usize,
    /// Distinct sequences per condition; ignored in exhaustive mode.
    pub sequences_per_condition: usize,
    pub seed: u64,
    /// Use all `K^N` sequences for every condition.
    pub exhaustive: bool,
}

/// Random weighted token dataset. Each condition gets its own set of
/// distinct sequences with positive weights summing to 1.
pub fn synth_dataset(spec: SynthSpec, cap: usize) -> Result<Vec<WeightedExample>> {
    if spec.k < 2 || spec.n == 0 || spec.num_conditions == 0 {
        return Err(Error::InvalidParameter(format!(
            "need K >= 2, N >= 1 and at least one condition, got {spec:?}"
        )));
    }
    let space = u32::try_from(spec.n).ok().and_then(|n| spec.k.checked_pow(n));
    let per_condition = if spec.exhaustive {
        match space {
            Some(s) if s <= cap => s,
            _ => return Err(Error::EnumerationCap { required: space.unwrap_or(usize::MAX), cap }),
        }
    } else {
        if spec.sequences_per_condition == 0 {
            return Err(Error::InvalidParameter("sequences_per_condition must be positive".into()));
        }
        if spec.sequences_per_condition > cap {
            return Err(Error::EnumerationCap { required: spec.sequences_per_condition, cap });
        }
        if space.is_some_and(|s| s < spec.sequences_per_condition) {
            return Err(Error::InvalidParameter(format!(
                "only {} distinct sequences exist",
                space.unwrap_or_default()
            )));
        }
        spec.sequences_per_condition
    };

    let mut rng = seeded_rng(spec.seed);
    let mut out = Vec::with_capacity(per_condition * spec.num_conditions);
    for c in 0..spec.num_conditions {
        let sequences: Vec<TokenSequence> = if spec.exhaustive {
            (0..per_condition).map(|index| decode(index, spec.k, spec.n)).collect()
        } else {
            let mut seen = BTreeMap::new();
            while seen.len() < per_condition {
                let seq = TokenSequence((0..spec.n).map(|_| rng.random_range(0..spec.k)).collect());
                let order = seen.len();
                seen.entry(seq).or_insert(order);
            }
            let mut ordered: Vec<_> = seen.into_iter().collect();
            ordered.sort_by_key(|(_, order)| *order);
            ordered.into_iter().map(|(seq, _)| seq).collect()
        };
        let raw: Vec<f64> = if per_condition == 1 {
            vec![1.0]
        } else {
            (0..per_condition).map(|_| rng.random_range(0.5..1.5)).collect()
        };
        let total: f64 = raw.iter().sum();
        out.extend(sequences.into_iter().zip(raw).map(|(tokens, w)| WeightedExample {
            condition: Condition(c),
            tokens,
            weight: w / total,
        }));
    }
    Ok(out)
}

/// Base-`k` digits of `index`, most significant first.
fn decode(mut index: usize, k: usize, n: usize) -> TokenSequence {
    let mut tokens = vec![0; n];
    for slot in tokens.iter_mut().rev() {
        *slot = index % k;
        index /= k;
    }
    TokenSequence(tokens)
}

/// Random clip records with 1..=`max_labels` labels drawn from `vocabulary`.
pub fn synth_records<R: Rng + ?Sized>(
    count: usize,
    vocabulary: &[&str],
    max_labels: usize,
    rng: &mut R,
) -> Vec<ClipRecord> {
    (0..count)
        .map(|i| {
            let m = rng.random_range(1..=max_labels.clamp(1, vocabulary.len()));
            let mut labels: Vec<String> = vocabulary.iter().map(|s| s.to_string()).collect();
            labels.shuffle(rng);
            labels.truncate(m);
            ClipRecord { id: format!("clip{i:05}"), labels, tokens: None }
        })
        .collect()
}
