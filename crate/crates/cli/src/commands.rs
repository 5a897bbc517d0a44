use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use diffcore::corpus::{curriculum_split, synth_dataset, ClipRecord, SynthSpec};
use diffcore::denoiser::{OracleDenoiser, TabularDenoiser};
use diffcore::diffusion::{self, infer_trace, stride_schedule, Condition, InferenceOutput, TokenSequence, TrainConfig};
use diffcore::metrics::{self, FeatureSet, ProbSet, KL_EPSILON};
use diffcore::{seeded_rng, Categorical, MatrixKind, NoiseSchedule, TransitionModel, DEFAULT_ENUMERATION_CAP};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::io::{emit, invalid, read_json, read_jsonl, read_rows, require_file, require_writable, write_atomic};

const CAP_VAR: &str = "DIFFCORE_ORACLE_CAP";

fn oracle_cap() -> Result<usize> {
    match std::env::var(CAP_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(cap) if cap > 0 => Ok(cap),
            _ => Err(invalid(format!("{CAP_VAR}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(DEFAULT_ENUMERATION_CAP),
    }
}

fn linear_model(kind: MatrixKind, k: usize, t: usize) -> Result<TransitionModel> {
    Ok(TransitionModel::new(NoiseSchedule::linear(kind, k, t)?))
}

/// Synthetic dataset with at most `wanted` distinct sequences per condition.
fn synthetic(k: usize, len: usize, conditions: usize, wanted: usize, seed: u64, cap: usize) -> Result<Vec<diffcore::corpus::WeightedExample>> {
    if len == 0 {
        return Err(invalid("--len must be at least 1"));
    }
    let space = u32::try_from(len).ok().and_then(|n| k.checked_pow(n)).unwrap_or(usize::MAX);
    let spec = SynthSpec {
        k,
        n: len,
        num_conditions: conditions,
        sequences_per_condition: wanted.min(space),
        seed,
        exhaustive: false,
    };
    Ok(synth_dataset(spec, cap)?)
}

#[derive(Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
enum DemoLine<'a> {
    Meta {
        seed: u64,
        kind: MatrixKind,
        #[serde(rename = "K")]
        k: usize,
        #[serde(rename = "T")]
        t: usize,
        stride: usize,
        x0: &'a [usize],
    },
    Forward { t: usize, tokens: &'a [usize] },
    Prior { t: usize, tokens: &'a [usize] },
    Reverse { from_t: usize, t: usize, tokens: &'a [usize] },
}

pub fn demo(kind: MatrixKind, k: usize, t: usize, stride: usize, seed: u64, len: usize, out: Option<&Path>) -> Result<()> {
    require_writable(out)?;
    let cap = oracle_cap()?;
    let model = linear_model(kind, k, t)?;
    stride_schedule(t, stride)?;
    if stride > t {
        return Err(invalid(format!("stride {stride} exceeds T = {t}")));
    }
    let data = synthetic(k, len, 1, 6, seed, cap)?;
    let mut rng = seeded_rng(seed);
    let pick = Categorical::from_weights(data.iter().map(|e| e.weight).collect())?.sample(&mut rng);
    let x0 = data[pick].tokens.clone();

    let mut forward = Vec::with_capacity(t);
    let mut x = x0.0.clone();
    for step in 1..=t {
        for tok in x.iter_mut() {
            *tok = model.step_distribution(*tok, step)?.sample(&mut rng);
        }
        forward.push(x.clone());
    }

    let oracle = OracleDenoiser::with_cap(model, data, cap)?;
    let (start, reverse) = infer_trace(oracle.model(), &oracle, Condition(0), len, stride, &mut rng)?;
    log::info!("demo: {} forward and {} reverse steps", forward.len(), reverse.len());

    emit(out, |w| {
        let mut line = |l: DemoLine| -> Result<()> {
            serde_json::to_writer(&mut *w, &l)?;
            writeln!(w)?;
            Ok(())
        };
        line(DemoLine::Meta { seed, kind, k, t, stride, x0: x0.tokens() })?;
        for (i, tokens) in forward.iter().enumerate() {
            line(DemoLine::Forward { t: i + 1, tokens })?;
        }
        line(DemoLine::Prior { t, tokens: start.tokens() })?;
        for r in &reverse {
            line(DemoLine::Reverse { from_t: r.from_t, t: r.t, tokens: r.tokens.tokens() })?;
        }
        Ok(())
    })
}

fn empirical_tv(samples: &[TokenSequence], reference: &[(TokenSequence, f64)]) -> f64 {
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

#[derive(Serialize)]
struct BenchmarkRow {
    #[serde(rename = "T")]
    t: usize,
    stride: usize,
    steps: usize,
    wall_time: f64,
    tv: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    kind: MatrixKind,
    k: usize,
    steps: &[usize],
    strides: &[usize],
    len: usize,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    require_writable(out)?;
    if samples == 0 {
        return Err(invalid("--samples must be positive"));
    }
    let cap = oracle_cap()?;
    let data = synthetic(k, len, 1, 6, seed, cap)?;
    let mut rows = Vec::new();
    for &t in steps {
        let oracle = OracleDenoiser::with_cap(linear_model(kind, k, t)?, data.clone(), cap)?;
        let reference = oracle.data_distribution(Condition(0));
        for &stride in strides {
            if stride == 0 || stride > t {
                return Err(invalid(format!("stride {stride} not in 1..={t}")));
            }
            let mut rng = seeded_rng(seed);
            let start = Instant::now();
            let drawn = (0..samples)
                .map(|_| diffusion::infer(oracle.model(), &oracle, Condition(0), len, stride, &mut rng))
                .collect::<diffcore::Result<Vec<_>>>()?;
            let wall_time = start.elapsed().as_secs_f64();
            let row = BenchmarkRow {
                t,
                stride,
                steps: stride_schedule(t, stride)?.len() - 1,
                wall_time,
                tv: empirical_tv(&drawn, &reference),
            };
            log::info!("T={t} stride={stride}: {wall_time:.3}s tv={:.4}", row.tv);
            rows.push(row);
        }
    }
    emit(out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for row in &rows {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    })
}

pub struct TrainArgs {
    pub kind: MatrixKind,
    pub k: usize,
    pub t: usize,
    pub params: PathBuf,
    pub data: Option<PathBuf>,
    pub epochs: usize,
    pub lambda: f64,
    pub lr: f64,
    pub len: usize,
    pub conditions: usize,
    pub sequences: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct TrainingLine {
    #[serde(default)]
    condition: Condition,
    tokens: TokenSequence,
}

pub fn train(args: TrainArgs) -> Result<()> {
    require_writable(Some(&args.params))?;
    require_writable(args.out.as_deref())?;
    if !(args.lambda.is_finite() && args.lambda >= 0.0) {
        return Err(invalid(format!("--lambda {} must be a nonnegative number", args.lambda)));
    }
    let model = linear_model(args.kind, args.k, args.t)?;
    let examples: Vec<(Condition, TokenSequence)> = match &args.data {
        Some(path) => read_jsonl::<TrainingLine>(path)?.into_iter().map(|l| (l.condition, l.tokens)).collect(),
        None => synthetic(args.k, args.len, args.conditions, args.sequences, args.seed, oracle_cap()?)?
            .into_iter()
            .map(|e| (e.condition, e.tokens))
            .collect(),
    };
    if examples.is_empty() {
        return Err(invalid("no training examples"));
    }
    let existing = args.params.is_file();
    let mut den = if existing {
        read_json::<TabularDenoiser>(&args.params)?
    } else {
        let conditions = examples.iter().map(|(c, _)| c.0 + 1).max().unwrap_or(1).max(args.conditions);
        TabularDenoiser::new(conditions, args.t, model.num_categories(), args.k, args.lr)?
    };
    if (den.num_steps(), den.num_categories(), den.num_tokens()) != (args.t, model.num_categories(), args.k) {
        return Err(invalid(format!(
            "{} holds a table for T = {}, {} categories, K = {}",
            args.params.display(),
            den.num_steps(),
            den.num_categories(),
            den.num_tokens()
        )));
    }

    let mut rng = seeded_rng(args.seed);
    let trace = diffusion::train(&model, &mut den, &examples, TrainConfig { epochs: args.epochs, lambda: args.lambda }, &mut rng)?;
    if args.epochs > 0 || !existing {
        write_atomic(&args.params, |w| {
            serde_json::to_writer(&mut *w, &den)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    emit(args.out.as_deref(), |w| Ok(trace.write_csv(w)?))
}

pub fn infer(kind: MatrixKind, params: &Path, stride: usize, len: usize, cond: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    require_writable(out)?;
    let den: TabularDenoiser = read_json(params)?;
    let model = linear_model(kind, den.num_tokens(), den.num_steps())?;
    if den.num_categories() != model.num_categories() {
        return Err(invalid(format!(
            "{} has {} categories, {kind} with K = {} needs {}",
            params.display(),
            den.num_categories(),
            den.num_tokens(),
            model.num_categories()
        )));
    }
    if cond >= den.num_conditions() {
        return Err(invalid(format!("condition {cond} not in table ({} conditions)", den.num_conditions())));
    }
    if len == 0 {
        return Err(invalid("--len must be at least 1"));
    }
    let tokens = diffusion::infer(&model, &den, Condition(cond), len, stride, &mut seeded_rng(seed))?;
    let doc = InferenceOutput { seed, stride, t: model.num_steps(), tokens: tokens.0 };
    emit(out, |w| {
        serde_json::to_writer(&mut *w, &doc)?;
        writeln!(w)?;
        Ok(())
    })
}

#[derive(Serialize)]
struct Score {
    metric: &'static str,
    value: f64,
    n_real: usize,
    n_fake: usize,
    metadata: serde_json::Value,
}

fn print_score(score: &Score, out: Option<&Path>) -> Result<()> {
    emit(out, |w| {
        serde_json::to_writer(&mut *w, score)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn fid(real: &Path, fake: &Path, out: Option<&Path>) -> Result<()> {
    require_file(real)?;
    require_file(fake)?;
    require_writable(out)?;
    let a = FeatureSet::from_rows(&read_rows(real)?)?;
    let b = FeatureSet::from_rows(&read_rows(fake)?)?;
    let report = metrics::fid(&a, &b)?;
    let score = Score {
        metric: "fid",
        value: report.value,
        n_real: a.len(),
        n_fake: b.len(),
        metadata: json!({ "dim": a.dim(), "regularized": report.regularized }),
    };
    print_score(&score, out)
}

pub fn kl(real: &Path, fake: &Path, out: Option<&Path>) -> Result<()> {
    require_file(real)?;
    require_file(fake)?;
    require_writable(out)?;
    let p = ProbSet::from_rows(&read_rows(real)?)?;
    let q = ProbSet::from_rows(&read_rows(fake)?)?;
    let value = metrics::kl_score(&p, &q)?;
    let score = Score {
        metric: "kl",
        value,
        n_real: p.len(),
        n_fake: q.len(),
        metadata: json!({ "classes": p.classes(), "epsilon": KL_EPSILON }),
    };
    print_score(&score, out)
}

pub fn mbtg(labels: &[String], count: usize, seed: u64) -> Result<()> {
    let mut rng = seeded_rng(seed);
    let texts = (0..count).map(|_| diffcore::corpus::mbtg(labels, &mut rng)).collect::<diffcore::Result<Vec<_>>>()?;
    emit(None, |w| {
        for text in &texts {
            writeln!(w, "{text}")?;
        }
        Ok(())
    })
}

pub fn split(records: &Path, out: Option<&Path>) -> Result<()> {
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => records.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf(),
    };
    if !dir.is_dir() {
        return Err(invalid(format!("output directory {} does not exist", dir.display())));
    }
    let all: Vec<ClipRecord> = read_jsonl(records)?;
    for r in &all {
        r.validate()?;
    }
    let (ses, mes) = curriculum_split(&all);
    for (name, subset) in [("ses.jsonl", &ses), ("mes.jsonl", &mes)] {
        write_atomic(&dir.join(name), |w| {
            for r in subset {
                serde_json::to_writer(&mut *w, r)?;
                writeln!(w)?;
            }
            Ok(())
        })?;
    }
    if ses.is_empty() || mes.is_empty() {
        log::warn!("split produced an empty subset ({} single-event, {} multi-event)", ses.len(), mes.len());
    }
    emit(None, |w| {
        serde_json::to_writer(&mut *w, &json!({ "input": all.len(), "ses": ses.len(), "mes": mes.len() }))?;
        writeln!(w)?;
        Ok(())
    })
}
