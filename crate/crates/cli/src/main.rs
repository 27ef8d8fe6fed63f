//! `probecard` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
//! error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use probecard::{DistanceMode, DistanceSource};

#[derive(Parser, Debug)]
#[command(name = "probecard", version, about = "Cardinality estimation for Euclidean range queries")]
struct Cli {
    /// Worker threads for estimation and workload labelling.
    #[arg(long, global = true, env = "PROBECARD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an index bundle from an fvecs dataset.
    Build(BuildArgs),
    /// Estimate cardinalities for a query workload.
    Estimate(EstimateArgs),
    /// Append the vectors of an fvecs file to a bundle.
    Update(UpdateArgs),
    /// Generate a labelled query workload from a dataset.
    Workload(WorkloadArgs),
    /// Score estimation results against a labelled workload.
    Eval(EvalArgs),
    /// Write a synthetic Gaussian-mixture dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    dataset: PathBuf,
    out_dir: PathBuf,
    #[arg(long, default_value_t = 12)]
    k_funcs: usize,
    #[arg(long, default_value_t = 4)]
    target_values: usize,
    /// Neighbor table depth [default: min(K, 6)].
    #[arg(long)]
    dmax: Option<usize>,
    /// Train a product quantizer for ADC estimation.
    #[arg(long, overrides_with = "no_pq")]
    pq: bool,
    #[arg(long, overrides_with = "pq")]
    no_pq: bool,
    /// PQ subspaces [default: largest divisor of d up to 8].
    #[arg(long)]
    pq_m: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pq_k: usize,
    #[arg(long, default_value_t = 25)]
    pq_iters: usize,
    /// Train codebooks on at most this many sampled points.
    #[arg(long)]
    pq_train_sample: Option<usize>,
    /// Retrain PQ during updates once added points exceed this fraction.
    #[arg(long)]
    pq_rebuild_threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Exact,
    Adc,
}

impl From<ModeArg> for DistanceSource {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => DistanceSource::Exact,
            ModeArg::Adc => DistanceSource::Adc,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MetricArg {
    /// Thresholds are squared Euclidean distances.
    SquaredL2,
    /// Thresholds are Euclidean distances.
    L2,
}

impl From<MetricArg> for DistanceMode {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::SquaredL2 => DistanceMode::SquaredL2,
            MetricArg::L2 => DistanceMode::L2,
        }
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    bundle: PathBuf,
    queries: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Confidence constant a = ln(1 / failure probability) [default: ln 1000].
    #[arg(long)]
    a: Option<f64>,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    s_init: f64,
    #[arg(long, default_value_t = 0.5)]
    s_max: f64,
    /// Fraction of the dataset that may be visited in neighbor buckets.
    #[arg(long, default_value_t = 0.01)]
    max_visit: f64,
    /// Deepest Hamming step to probe [default: the bundle's table depth].
    #[arg(long)]
    dmax: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MetricArg::SquaredL2)]
    distance: MetricArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results file (JSON lines) [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct UpdateArgs {
    bundle: PathBuf,
    new_points: PathBuf,
    /// Overrides the threshold stored in the bundle.
    #[arg(long)]
    pq_rebuild_threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct WorkloadArgs {
    dataset: PathBuf,
    out: PathBuf,
    /// Query vectors [default: min(N / 1000, 1000)].
    #[arg(long)]
    n_queries: Option<usize>,
    #[arg(long, default_value_t = 40)]
    n_cards: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::SquaredL2)]
    distance: MetricArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    results: PathBuf,
    workload: PathBuf,
    /// Extra estimator to score, e.g. `sample:0.01`. Repeatable.
    #[arg(long = "baseline")]
    baselines: Vec<String>,
    /// Dataset for baselines; a bundle directory or an fvecs file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::SquaredL2)]
    distance: MetricArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the reports as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write per-query rows of the estimator report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    clusters: usize,
    #[arg(long, default_value_t = 4.0)]
    center_std: f64,
    #[arg(long, default_value_t = 1.0)]
    cluster_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = std::panic::catch_unwind(|| commands::run(cli));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(3),
    }
}
