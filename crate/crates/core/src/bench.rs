//! Ground truth, workload generation, Q-error reports and a synthetic data
//! generator.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{DistanceSource, IndexBundle};
use crate::distance::squared_l2;
use crate::error::{Error, Result};
use crate::io::QueryRecord;
use crate::prober::sampling_baseline;
use crate::types::{Dataset, DistanceMode, Estimate, ProberConfig, RangeQuery};

/// Linear-scan count of points with `dist(q, x) ≤ τ` under `mode`.
pub fn brute_force_cardinality(query: &RangeQuery, dataset: &Dataset, mode: DistanceMode) -> Result<u64> {
    dataset.check_dim(query.point.len())?;
    let t = mode.squared_threshold(query.tau);
    Ok(dataset.rows().filter(|r| squared_l2(&query.point, r) <= t).count() as u64)
}

/// `max(ĉ, c) / min(ĉ, c)` with the estimate clamped to at least 1.
///
/// ```
/// use probecard::bench::q_error;
/// assert_eq!(q_error(10.0, 5.0).unwrap(), 2.0);
/// assert_eq!(q_error(0.0, 5.0).unwrap(), 5.0);
/// ```
pub fn q_error(estimate: f64, truth: f64) -> Result<f64> {
    if !(truth >= 1.0) {
        return Err(Error::param(format!("true cardinality {truth} must be >= 1")));
    }
    if !(estimate >= 0.0) {
        return Err(Error::param(format!("estimate {estimate} must be >= 0")));
    }
    let e = estimate.max(1.0);
    Ok(e.max(truth) / e.min(truth))
}

/// RNG stream for one query: the run seed picks the key, the query id the
/// stream, so results do not depend on evaluation order.
pub fn query_rng(seed: u64, query_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query_id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    /// Number of query vectors; `None` means `min(N / 1000, 1000)`, at least 1.
    pub n_queries: Option<usize>,
    /// Target cardinalities per query vector.
    pub n_cards: usize,
    pub seed: u64,
    pub distance_mode: DistanceMode,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            n_queries: None,
            n_cards: 40,
            seed: 0,
            distance_mode: DistanceMode::SquaredL2,
        }
    }
}

pub const MIN_WORKLOAD_POINTS: usize = 100;

/// Largest target cardinality: `min(20000, ⌊N / 100⌋)`.
pub fn max_target(n: usize) -> u64 {
    (n as u64 / 100).clamp(1, 20_000)
}

/// `count` targets spaced geometrically over `[1, max]`, both ends included,
/// rounded to integers. Duplicates after rounding are kept.
pub fn geometric_targets(max: u64, count: usize) -> Vec<u64> {
    match count {
        0 => Vec::new(),
        1 => vec![max],
        _ => (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                ((max as f64).powf(t).round() as u64).clamp(1, max)
            })
            .collect(),
    }
}

/// Smallest `t` with `t · t ≥ d2` in f64, so the squared threshold used
/// during estimation admits the target point.
fn l2_threshold(d2: f64) -> f64 {
    let mut t = d2.sqrt();
    while t * t < d2 {
        t = t.next_up();
    }
    while t > 0.0 && t.next_down() * t.next_down() >= d2 {
        t = t.next_down();
    }
    t
}

/// Samples query vectors from the dataset and labels each with thresholds
/// whose exact cardinalities span a geometric grid.
pub fn generate_workload(dataset: &Dataset, cfg: &WorkloadConfig) -> Result<Vec<QueryRecord>> {
    let n = dataset.len();
    if n < MIN_WORKLOAD_POINTS {
        return Err(Error::param(format!(
            "workload generation needs at least {MIN_WORKLOAD_POINTS} points, got {n}"
        )));
    }
    let kq = cfg.n_queries.unwrap_or((n / 1000).clamp(1, 1000));
    if kq == 0 || kq > n {
        return Err(Error::param(format!("cannot sample {kq} query vectors from {n} points")));
    }
    let targets = geometric_targets(max_target(n), cfg.n_cards);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids = sample(&mut rng, n, kq).into_vec();
    ids.sort_unstable();

    let mut out = Vec::with_capacity(kq * targets.len());
    let mut dists = Vec::with_capacity(n);
    for id in ids {
        let q = dataset.row(id);
        dists.clear();
        dists.extend(dataset.rows().map(|r| squared_l2(q, r)));
        dists.sort_unstable_by(f64::total_cmp);
        for &c in &targets {
            let d2 = dists[c as usize - 1];
            let tau = match cfg.distance_mode {
                DistanceMode::SquaredL2 => d2,
                DistanceMode::L2 => l2_threshold(d2),
            };
            let t = cfg.distance_mode.squared_threshold(tau);
            let truth = dists.partition_point(|&d| d <= t) as u64;
            out.push(QueryRecord {
                query_id: out.len() as u64,
                vector: q.to_vec(),
                tau,
                true_cardinality: Some(truth),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryError {
    pub query_id: u64,
    pub true_cardinality: u64,
    pub estimate: f64,
    pub q_error: f64,
    pub latency_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QErrorReport {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub mean_latency_us: f64,
    pub per_query: Vec<QueryError>,
}

/// Nearest-rank percentile of an ascending slice: element `⌈p/100 · n⌉`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One estimate to score: `(query_id, truth, estimate, latency µs)`.
pub type Scored = (u64, u64, f64, f64);

pub fn evaluate(label: &str, rows: &[Scored]) -> Result<QErrorReport> {
    if rows.is_empty() {
        return Err(Error::param("cannot evaluate an empty workload"));
    }
    let per_query = rows
        .iter()
        .map(|&(query_id, truth, estimate, latency_us)| {
            Ok(QueryError {
                query_id,
                true_cardinality: truth,
                estimate,
                q_error: q_error(estimate, truth as f64)?,
                latency_us,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut q: Vec<f64> = per_query.iter().map(|r| r.q_error).collect();
    q.sort_unstable_by(f64::total_cmp);
    let n = q.len() as f64;
    Ok(QErrorReport {
        label: label.to_string(),
        count: q.len(),
        mean: q.iter().sum::<f64>() / n,
        p50: nearest_rank(&q, 50.0),
        p90: nearest_rank(&q, 90.0),
        p95: nearest_rank(&q, 95.0),
        p99: nearest_rank(&q, 99.0),
        max: q[q.len() - 1],
        mean_latency_us: per_query.iter().map(|r| r.latency_us).sum::<f64>() / n,
        per_query,
    })
}

impl QErrorReport {
    pub const TABLE_HEADER: &'static str = "estimator                  n      mean       p50       p90       p95       p99       max   lat(us)";

    pub fn table_row(&self) -> String {
        format!(
            "{:<20} {:>7} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.1}",
            self.label, self.count, self.mean, self.p50, self.p90, self.p95, self.p99, self.max, self.mean_latency_us
        )
    }

    /// Aligned plain-text table over several reports.
    pub fn table(reports: &[QErrorReport]) -> String {
        let mut s = String::from(Self::TABLE_HEADER);
        s.push('\n');
        for r in reports {
            s.push_str(&r.table_row());
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("query_id,true_cardinality,estimate,q_error,latency_us\n");
        for r in &self.per_query {
            let _ = writeln!(s, "{},{},{},{},{}", r.query_id, r.true_cardinality, r.estimate, r.q_error, r.latency_us);
        }
        s
    }
}

/// An estimate with its wall-clock latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedEstimate {
    pub query_id: u64,
    pub estimate: Estimate,
    pub latency_us: f64,
}

fn to_query(rec: &QueryRecord) -> Result<RangeQuery> {
    RangeQuery::new(rec.vector.clone(), rec.tau)
}

/// Runs the prober over a workload, one RNG stream per query id.
pub fn run_prober(
    bundle: &IndexBundle,
    cfg: ProberConfig,
    source: DistanceSource,
    records: &[QueryRecord],
    seed: u64,
) -> Result<Vec<TimedEstimate>> {
    let prober = bundle.prober(cfg)?;
    records
        .iter()
        .map(|rec| {
            let q = to_query(rec)?;
            let mut rng = query_rng(seed, rec.query_id);
            let start = Instant::now();
            let estimate = bundle.estimate(&prober, &q, source, &mut rng)?;
            Ok(TimedEstimate {
                query_id: rec.query_id,
                estimate,
                latency_us: start.elapsed().as_secs_f64() * 1e6,
            })
        })
        .collect()
}

/// Runs the uniform-sampling baseline over a workload.
pub fn run_sampling(
    dataset: &Dataset,
    fraction: f64,
    mode: DistanceMode,
    records: &[QueryRecord],
    seed: u64,
) -> Result<Vec<TimedEstimate>> {
    records
        .iter()
        .map(|rec| {
            let q = to_query(rec)?;
            let mut rng = query_rng(seed, rec.query_id);
            let start = Instant::now();
            let estimate = sampling_baseline(&q, dataset, fraction, mode, &mut rng)?;
            Ok(TimedEstimate {
                query_id: rec.query_id,
                estimate,
                latency_us: start.elapsed().as_secs_f64() * 1e6,
            })
        })
        .collect()
}

/// Pairs timed estimates with labeled records by query id.
pub fn score(records: &[QueryRecord], results: &[TimedEstimate]) -> Result<Vec<Scored>> {
    let truth: std::collections::HashMap<u64, u64> = records
        .iter()
        .map(|r| {
            r.true_cardinality
                .map(|t| (r.query_id, t))
                .ok_or_else(|| Error::param(format!("query {} has no true cardinality", r.query_id)))
        })
        .collect::<Result<_>>()?;
    results
        .iter()
        .map(|t| {
            let c = truth
                .get(&t.query_id)
                .ok_or_else(|| Error::param(format!("no workload record for query {}", t.query_id)))?;
            Ok((t.query_id, *c, t.estimate.cardinality, t.latency_us))
        })
        .collect()
}

/// Isotropic Gaussian clusters with centres drawn from `N(0, center_std²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    pub center_std: f64,
    pub cluster_std: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn new(n: usize, dim: usize) -> Self {
        MixtureSpec {
            n,
            dim,
            clusters: 16,
            center_std: 4.0,
            cluster_std: 1.0,
            seed: 0,
        }
    }
}

/// Samples a Gaussian-mixture dataset; point `i` belongs to cluster
/// `i mod clusters`.
pub fn gaussian_mixture(spec: &MixtureSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.dim == 0 || spec.clusters == 0 {
        return Err(Error::param("mixture needs n, dim and clusters >= 1"));
    }
    let bad = |what| Error::param(format!("{what} must be finite and >= 0"));
    let centre_dist = Normal::new(0.0, spec.center_std).map_err(|_| bad("center_std"))?;
    let noise = Normal::new(0.0, spec.cluster_std).map_err(|_| bad("cluster_std"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres: Vec<f64> = (0..spec.clusters * spec.dim)
        .map(|_| centre_dist.sample(&mut rng))
        .collect();
    let mut data = Vec::with_capacity(spec.n * spec.dim);
    for i in 0..spec.n {
        let c = &centres[(i % spec.clusters) * spec.dim..][..spec.dim];
        data.extend(c.iter().map(|&m| (m + noise.sample(&mut rng)) as f32));
    }
    Dataset::new(spec.dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        gaussian_mixture(&MixtureSpec {
            seed: 3,
            ..MixtureSpec::new(2_000, 8)
        })
        .unwrap()
    }

    #[test]
    fn brute_force_extremes() {
        let ds = small();
        let far = RangeQuery::new(vec![1e3; 8], 1.0).unwrap();
        assert_eq!(brute_force_cardinality(&far, &ds, DistanceMode::SquaredL2).unwrap(), 0);
        let all = RangeQuery::new(vec![0.0; 8], 1e12).unwrap();
        assert_eq!(brute_force_cardinality(&all, &ds, DistanceMode::SquaredL2).unwrap(), 2_000);
        let wrong = RangeQuery::new(vec![0.0; 3], 1.0).unwrap();
        assert!(brute_force_cardinality(&wrong, &ds, DistanceMode::SquaredL2).is_err());
    }

    #[test]
    fn q_error_cases() {
        assert_eq!(q_error(7.0, 7.0).unwrap(), 1.0);
        assert_eq!(q_error(10.0, 5.0).unwrap(), 2.0);
        assert_eq!(q_error(0.0, 5.0).unwrap(), 5.0);
        assert_eq!(q_error(0.5, 1.0).unwrap(), 1.0);
        assert!(q_error(3.0, 0.0).is_err());
        assert!(q_error(-1.0, 2.0).is_err());
    }

    #[test]
    fn targets_are_geometric_with_endpoints() {
        let t = geometric_targets(1_000, 40);
        assert_eq!(t.len(), 40);
        assert_eq!((t[0], t[39]), (1, 1_000));
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(max_target(100_000), 1_000);
        assert_eq!(max_target(10_000_000), 20_000);
        assert_eq!(max_target(150), 1);
        assert_eq!(geometric_targets(50, 1), vec![50]);
    }

    #[test]
    fn workload_is_sound() {
        let ds = small();
        let cfg = WorkloadConfig {
            n_queries: Some(5),
            n_cards: 10,
            seed: 1,
            ..WorkloadConfig::default()
        };
        let w = generate_workload(&ds, &cfg).unwrap();
        assert_eq!(w.len(), 50);
        assert_eq!(w, generate_workload(&ds, &cfg).unwrap());
        for (i, rec) in w.iter().enumerate() {
            assert_eq!(rec.query_id, i as u64);
            let q = RangeQuery::new(rec.vector.clone(), rec.tau).unwrap();
            let truth = brute_force_cardinality(&q, &ds, DistanceMode::SquaredL2).unwrap();
            assert_eq!(Some(truth), rec.true_cardinality);
            // τ is minimal: the next smaller threshold loses the c-th point.
            if rec.tau > 0.0 {
                let below = RangeQuery::new(rec.vector.clone(), rec.tau.next_down()).unwrap();
                assert!(brute_force_cardinality(&below, &ds, DistanceMode::SquaredL2).unwrap() < truth);
            }
        }
        // c = 1 with a stored point: τ = 0, truth 1.
        assert_eq!(w[0].tau, 0.0);
        assert_eq!(w[0].true_cardinality, Some(1));
    }

    #[test]
    fn l2_workload_thresholds_are_consistent() {
        let ds = small();
        let cfg = WorkloadConfig {
            n_queries: Some(4),
            n_cards: 8,
            seed: 2,
            distance_mode: DistanceMode::L2,
        };
        for rec in generate_workload(&ds, &cfg).unwrap() {
            let q = RangeQuery::new(rec.vector.clone(), rec.tau).unwrap();
            let truth = brute_force_cardinality(&q, &ds, DistanceMode::L2).unwrap();
            assert_eq!(Some(truth), rec.true_cardinality);
            if rec.tau > 0.0 {
                let below = RangeQuery::new(rec.vector.clone(), rec.tau.next_down()).unwrap();
                assert!(brute_force_cardinality(&below, &ds, DistanceMode::L2).unwrap() < truth);
            }
        }
    }

    #[test]
    fn workload_defaults_and_errors() {
        let ds = small();
        let w = generate_workload(&ds, &WorkloadConfig::default()).unwrap();
        assert_eq!(w.len(), 2 * 40);
        let tiny = ds.split_at(99).0;
        assert!(generate_workload(&tiny, &WorkloadConfig::default()).is_err());
        let one = WorkloadConfig {
            n_queries: Some(3),
            n_cards: 1,
            ..WorkloadConfig::default()
        };
        assert_eq!(generate_workload(&ds, &one).unwrap().len(), 3);
    }

    #[test]
    fn percentiles_match_sort_and_index() {
        let rows: Vec<Scored> = (0..100).map(|i| (i, 10, 10.0 * (1.0 + (i * 37 % 100) as f64 / 10.0), 1.0)).collect();
        let r = evaluate("x", &rows).unwrap();
        let mut q: Vec<f64> = rows.iter().map(|&(_, t, e, _)| e / t as f64).collect();
        q.sort_by(f64::total_cmp);
        assert_eq!(r.p90, q[89]);
        assert_eq!(r.p95, q[94]);
        assert_eq!(r.p99, q[98]);
        assert_eq!(r.max, q[99]);
        assert!(r.p90 <= r.p95 && r.p95 <= r.p99 && r.p99 <= r.max);

        let single = evaluate("one", &[(0, 4, 8.0, 2.0)]).unwrap();
        assert_eq!([single.mean, single.p90, single.p99, single.max], [2.0; 4]);
        let perfect = evaluate("ok", &[(0, 4, 4.0, 1.0), (1, 9, 9.0, 1.0)]).unwrap();
        assert_eq!([perfect.mean, perfect.max], [1.0, 1.0]);
        assert!(evaluate("none", &[]).is_err());
        assert_eq!(perfect.to_csv().lines().count(), 3);
        assert_eq!(QErrorReport::table(&[perfect]).lines().count(), 2);
    }

    #[test]
    fn query_streams_are_independent_of_order() {
        use rand::Rng;
        let a: u64 = query_rng(5, 3).random();
        let _ = query_rng(5, 2).random::<u64>();
        let b: u64 = query_rng(5, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, query_rng(5, 4).random::<u64>());
    }

    #[test]
    fn mixture_is_deterministic() {
        let spec = MixtureSpec::new(100, 4);
        assert_eq!(gaussian_mixture(&spec).unwrap(), gaussian_mixture(&spec).unwrap());
        assert!(gaussian_mixture(&MixtureSpec { clusters: 0, ..spec }).is_err());
    }
}
