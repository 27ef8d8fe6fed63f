use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use probecard::bench::{self, TimedEstimate};
use probecard::bundle::{read_manifest, sha256_hex};
use probecard::io::{decode_fvecs, read_queries, write_fvecs, write_queries};
use probecard::pq::default_m;
use probecard::{
    BuildConfig, Dataset, DistanceMode, DistanceSource, Error, IndexBundle, LshParams, PqParams, ProberConfig,
    QueryRecord, RangeQuery,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{BuildArgs, Cli, Command, EstimateArgs, EvalArgs, SynthArgs, UpdateArgs, WorkloadArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::InvalidParameter(_)) => 1,
            CliError::Core(Error::DuplicateCode(_) | Error::UnknownPoint(_) | Error::CodeLengthMismatch { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Provenance written next to every artifact a command produces.
#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: Value,
    dataset_sha256: Option<String>,
    started_unix: f64,
    finished_unix: f64,
}

impl RunManifest {
    fn new(command: &'static str, config: Value, dataset_sha256: Option<String>, started_unix: f64) -> Self {
        RunManifest {
            tool: "probecard",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            dataset_sha256,
            started_unix,
            finished_unix: now_unix(),
        }
    }

    fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("manifest serializes")
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Reads an fvecs dataset and the checksum of its bytes.
fn read_dataset(path: &Path) -> Result<(Dataset, String)> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok((decode_fvecs(&bytes, path)?, sha256_hex(&bytes)))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Build(a) => build(a),
        Command::Estimate(a) => estimate(a),
        Command::Update(a) => update(a),
        Command::Workload(a) => workload(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    })
}

fn build(a: BuildArgs) -> Result<()> {
    let (dataset, _) = read_dataset(&a.dataset)?;
    let pq = (a.pq && !a.no_pq).then(|| PqParams {
        m_subspaces: a.pq_m.unwrap_or_else(|| default_m(dataset.dim())),
        k_clusters: a.pq_k,
        kmeans_iters: a.pq_iters,
        seed: a.seed,
        train_sample: a.pq_train_sample,
    });
    let config = BuildConfig {
        lsh: LshParams {
            k_funcs: a.k_funcs,
            target_values: a.target_values,
            seed: a.seed,
        },
        d_max: a.dmax,
        pq,
        pq_rebuild_threshold: a.pq_rebuild_threshold,
    };
    let bundle = IndexBundle::build(dataset, config)?;
    let manifest = bundle.save(&a.out_dir)?;
    eprintln!(
        "built {} points, {} buckets, width {:.6}, neighbor depth {}{}",
        manifest.num_points,
        manifest.num_codes,
        manifest.width,
        bundle.neighbors().d_max(),
        if bundle.pq().is_some() { ", with PQ" } else { "" }
    );
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let started = now_unix();
    let bundle = IndexBundle::load(&a.bundle)?;
    let source = DistanceSource::from(a.mode);
    if source == DistanceSource::Adc && bundle.pq().is_none() {
        return Err(Error::MissingPq.into());
    }
    let records = read_queries(&a.queries)?;
    let cfg = ProberConfig {
        epsilon: a.epsilon,
        confidence_a: a.a.unwrap_or_else(|| 1000f64.ln()),
        s_init: a.s_init,
        s_max: a.s_max,
        max_visit_fraction: a.max_visit,
        distance_mode: a.distance.into(),
        max_step: a.dmax,
    };
    let prober = bundle.prober(cfg)?;
    let results: Vec<TimedEstimate> = records
        .par_iter()
        .map(|rec| {
            let q = RangeQuery::new(rec.vector.clone(), rec.tau)?;
            let mut rng = bench::query_rng(a.seed, rec.query_id);
            let start = std::time::Instant::now();
            let estimate = bundle.estimate(&prober, &q, source, &mut rng)?;
            Ok(TimedEstimate {
                query_id: rec.query_id,
                estimate,
                latency_us: start.elapsed().as_secs_f64() * 1e6,
            })
        })
        .collect::<std::result::Result<_, Error>>()?;

    let mut text = String::new();
    for r in &results {
        text.push_str(&serde_json::to_string(r).map_err(Error::from)?);
        text.push('\n');
    }
    match &a.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| io_err(path, e))?;
            let manifest = RunManifest::new(
                "estimate",
                json!({
                    "bundle": a.bundle,
                    "queries": a.queries,
                    "prober": cfg,
                    "mode": source,
                    "seed": a.seed,
                    "build": bundle.config(),
                }),
                Some(read_manifest(&a.bundle)?.dataset_sha256),
                started,
            );
            write_json(&sidecar(path), &manifest.to_value())?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            out.write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

fn update(a: UpdateArgs) -> Result<()> {
    let mut bundle = IndexBundle::load(&a.bundle)?;
    let bytes = std::fs::read(&a.new_points).map_err(|e| io_err(&a.new_points, e))?;
    let new_points = if bytes.is_empty() {
        Dataset::empty(bundle.dataset().dim())?
    } else {
        decode_fvecs(&bytes, &a.new_points)?
    };
    if a.pq_rebuild_threshold.is_some() {
        bundle.set_pq_rebuild_threshold(a.pq_rebuild_threshold);
    }
    let entry = bundle.update(&new_points)?.clone();
    bundle.save(&a.bundle)?;
    eprintln!(
        "added {} points ({} total); width changed: {}, neighbor table rebuilt: {}, PQ retrained: {}",
        entry.points_added, entry.total_points, entry.width_changed, entry.neighbors_rebuilt, entry.pq_retrained
    );
    Ok(())
}

fn workload(a: WorkloadArgs) -> Result<()> {
    let started = now_unix();
    let (dataset, checksum) = read_dataset(&a.dataset)?;
    let cfg = bench::WorkloadConfig {
        n_queries: a.n_queries,
        n_cards: a.n_cards,
        seed: a.seed,
        distance_mode: a.distance.into(),
    };
    let records = bench::generate_workload(&dataset, &cfg)?;
    write_queries(&records, &a.out)?;
    let manifest = RunManifest::new(
        "workload",
        json!({ "dataset": a.dataset, "workload": cfg }),
        Some(checksum),
        started,
    );
    write_json(&sidecar(&a.out), &manifest.to_value())?;
    eprintln!("wrote {} queries to {}", records.len(), a.out.display());
    Ok(())
}

fn read_results(path: &Path) -> Result<Vec<TimedEstimate>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn parse_baseline(spec: &str) -> Result<f64> {
    let fraction = spec
        .strip_prefix("sample:")
        .and_then(|f| f.parse::<f64>().ok())
        .filter(|f| *f > 0.0 && *f <= 1.0);
    fraction.ok_or_else(|| CliError::Usage(format!("unknown baseline `{spec}`; expected sample:<fraction in (0, 1]>")))
}

fn baseline_dataset(path: &Path) -> Result<Dataset> {
    let file = if path.is_dir() { path.join("data.fvecs") } else { path.to_path_buf() };
    Ok(read_dataset(&file)?.0)
}

fn eval(a: EvalArgs) -> Result<()> {
    let started = now_unix();
    let results = read_results(&a.results)?;
    let workload: Vec<QueryRecord> = read_queries(&a.workload)?;
    let mut ids: Vec<u64> = results.iter().map(|r| r.query_id).collect();
    let mut expected: Vec<u64> = workload.iter().map(|r| r.query_id).collect();
    ids.sort_unstable();
    expected.sort_unstable();
    if ids != expected {
        return Err(Error::Format {
            path: a.results.clone(),
            message: "query ids do not match the workload".into(),
        }
        .into());
    }
    let fractions = a
        .baselines
        .iter()
        .map(|b| parse_baseline(b))
        .collect::<Result<Vec<_>>>()?;

    let mut reports = vec![bench::evaluate("estimator", &bench::score(&workload, &results)?)?];
    if !fractions.is_empty() {
        let data = a
            .data
            .as_deref()
            .ok_or_else(|| CliError::Usage("--baseline needs --data".into()))?;
        let dataset = baseline_dataset(data)?;
        let mode: DistanceMode = a.distance.into();
        for (spec, f) in a.baselines.iter().zip(fractions) {
            let r = bench::run_sampling(&dataset, f, mode, &workload, a.seed)?;
            reports.push(bench::evaluate(spec, &bench::score(&workload, &r)?)?);
        }
    }

    print!("{}", bench::QErrorReport::table(&reports));
    if let Some(path) = &a.json {
        let manifest = RunManifest::new(
            "eval",
            json!({
                "results": a.results,
                "workload": a.workload,
                "baselines": a.baselines,
                "seed": a.seed,
            }),
            None,
            started,
        );
        write_json(path, &json!({ "manifest": manifest.to_value(), "reports": reports }))?;
    }
    if let Some(path) = &a.csv {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(reports[0].to_csv().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = bench::MixtureSpec {
        n: a.n,
        dim: a.dim,
        clusters: a.clusters,
        center_std: a.center_std,
        cluster_std: a.cluster_std,
        seed: a.seed,
    };
    let dataset = bench::gaussian_mixture(&spec)?;
    write_fvecs(&dataset, &a.out)?;
    eprintln!("wrote {} x {} vectors to {}", dataset.len(), dataset.dim(), a.out.display());
    Ok(())
}
