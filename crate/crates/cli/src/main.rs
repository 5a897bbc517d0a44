mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffcore::diffusion::DEFAULT_LAMBDA;
use diffcore::MatrixKind;

#[derive(Parser)]
#[command(name = "diffcore", version, about = "Discrete diffusion toolkit: demos, training, sampling and metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct ModelArgs {
    /// Transition kind: uniform, mask or mask-uniform.
    #[arg(long, default_value = "mask-uniform")]
    kind: MatrixKind,
    /// Number of data tokens.
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
    /// Number of diffusion steps.
    #[arg(long = "T", default_value_t = 100)]
    t: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Forward corruption of one synthetic sequence, then oracle reverse sampling, as JSON Lines.
    Demo {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sequence length.
        #[arg(long, default_value_t = 4)]
        len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wall time and sample quality of strided sampling with the oracle denoiser (CSV).
    Benchmark {
        #[arg(long, default_value = "mask-uniform")]
        kind: MatrixKind,
        #[arg(long = "K", default_value_t = 5)]
        k: usize,
        /// Step counts to benchmark, comma separated.
        #[arg(long = "T", value_delimiter = ',', default_value = "25,50,100")]
        t: Vec<usize>,
        /// Strides to benchmark, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
        stride: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        len: usize,
        /// Samples drawn per (T, stride) pair.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains a tabular denoiser; the parameter file is created or updated in place.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// Tabular parameters (JSON); loaded when present.
        #[arg(long)]
        params: PathBuf,
        /// JSON Lines of {"condition", "tokens"}; synthetic data when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// Learning rate for new parameter files.
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        /// Synthetic sequence length.
        #[arg(long, default_value_t = 2)]
        len: usize,
        #[arg(long, default_value_t = 1)]
        conditions: usize,
        /// Synthetic sequences per condition.
        #[arg(long, default_value_t = 6)]
        sequences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Loss trace (CSV).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Samples one sequence from a trained tabular denoiser (JSON).
    Infer {
        #[arg(long, default_value = "mask-uniform")]
        kind: MatrixKind,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 2)]
        len: usize,
        #[arg(long, default_value_t = 0)]
        cond: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fréchet distance between two feature files (CSV with header, or JSON).
    Fid {
        real: PathBuf,
        fake: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean per-row KL between two class-probability files.
    Kl {
        real: PathBuf,
        fake: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Masked caption text for an ordered list of event labels.
    Mbtg {
        #[arg(required = true)]
        labels: Vec<String>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Splits clip records (JSON Lines) into single-event and multi-event files.
    Split {
        records: PathBuf,
        /// Output directory for ses.jsonl and mes.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Demo { model, stride, seed, len, out } => {
            commands::demo(model.kind, model.k, model.t, stride, seed, len, out.as_deref())
        }
        Command::Benchmark { kind, k, t, stride, len, samples, seed, out } => {
            commands::benchmark(kind, k, &t, &stride, len, samples, seed, out.as_deref())
        }
        Command::Train { model, params, data, epochs, lambda, lr, len, conditions, sequences, seed, out } => {
            commands::train(commands::TrainArgs {
                kind: model.kind,
                k: model.k,
                t: model.t,
                params,
                data,
                epochs,
                lambda,
                lr,
                len,
                conditions,
                sequences,
                seed,
                out,
            })
        }
        Command::Infer { kind, params, stride, len, cond, seed, out } => {
            commands::infer(kind, &params, stride, len, cond, seed, out.as_deref())
        }
        Command::Fid { real, fake, out } => commands::fid(&real, &fake, out.as_deref()),
        Command::Kl { real, fake, out } => commands::kl(&real, &fake, out.as_deref()),
        Command::Mbtg { labels, count, seed } => commands::mbtg(&labels, count, seed),
        Command::Split { records, out } => commands::split(&records, out.as_deref()),
    }
}

/// 2 for invalid input, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use diffcore::Error as E;
    if err.downcast_ref::<io::Invalid>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidParameter(_)
            | E::Shape(_)
            | E::TokenOutOfRange { .. }
            | E::TimestepOutOfRange { .. }
            | E::Saturated { .. }
            | E::NotSaturated(_)
            | E::OracleLimit { .. }
            | E::EnumerationCap { .. }
            | E::NonFinite(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
