//! Online cardinality estimation by adaptive Hamming-neighbor probing.
//!
//! A query is hashed to its central bucket, which is counted exactly. The
//! prober then walks outward through the `k`-step neighborhoods
//! `N_1, N_2, …`. Each neighborhood's point population is estimated with
//! progressive sampling: the sampling rate doubles from `s_init` up to `s_max`
//! until concentration bounds on the selectivity are tight enough. Probing
//! stops when the visited population reaches the budget, when a neighborhood
//! is confidently empty (`μ_upper < ε`), or when `d_max` is reached.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distance::squared_l2;
use crate::error::{Error, Result};
use crate::lsh::LshIndex;
use crate::neighbors::{scan_neighbors, NeighborTable};
use crate::pq::{AdcTable, PqIndex};
use crate::types::{Dataset, Estimate, ProberConfig, RangeQuery, Termination};

/// Confidence interval for a selectivity estimated from `w` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub mu_upper: f64,
    pub mu_lower: f64,
    pub p_hat: f64,
    pub w: u64,
    pub a: f64,
}

/// Upper and lower bounds on the true selectivity given the observed rate
/// `p_hat` over `w` samples and confidence constant `a = ln(1 / Pr_fail)`.
///
/// ```
/// use probecard::prober::bounds;
/// let b = bounds(0.0, 1000, 1000f64.ln()).unwrap();
/// assert!((b.mu_upper - 0.0138155).abs() < 1e-6);
/// assert_eq!(b.mu_lower, 0.0);
/// ```
pub fn bounds(p_hat: f64, w: u64, a: f64) -> Result<BoundPair> {
    if w == 0 {
        return Err(Error::param("sample size must be >= 1"));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::param(format!("selectivity {p_hat} outside [0, 1]")));
    }
    if !(a > 0.0) {
        return Err(Error::param("confidence constant must be > 0"));
    }
    let w_f = w as f64;
    let half = a / (2.0 * w_f);
    let upper = ((p_hat + half).sqrt() + half.sqrt()).powi(2);
    let lower = (((p_hat + 2.0 * a / (9.0 * w_f)).sqrt() - half.sqrt()).powi(2) - a / (18.0 * w_f)).max(0.0);
    Ok(BoundPair {
        mu_upper: upper,
        mu_lower: lower,
        p_hat,
        w,
        a,
    })
}

/// Squared distance from the current query to a stored point.
pub trait PointDistance {
    fn squared_distance(&self, point: u32) -> f64;
}

/// Exact squared Euclidean distance against the full-precision dataset.
pub struct ExactDistance<'a> {
    dataset: &'a Dataset,
    query: &'a [f32],
}

impl<'a> ExactDistance<'a> {
    pub fn new(dataset: &'a Dataset, query: &'a [f32]) -> Result<Self> {
        dataset.check_dim(query.len())?;
        Ok(ExactDistance { dataset, query })
    }
}

impl PointDistance for ExactDistance<'_> {
    #[inline]
    fn squared_distance(&self, point: u32) -> f64 {
        squared_l2(self.query, self.dataset.row(point as usize))
    }
}

/// Asymmetric PQ distance through a per-query lookup table.
pub struct AdcDistance<'a> {
    pq: &'a PqIndex,
    table: AdcTable,
}

impl<'a> AdcDistance<'a> {
    pub fn new(pq: &'a PqIndex, query: &[f32]) -> Result<Self> {
        Ok(AdcDistance {
            pq,
            table: pq.build_adc_table(query)?,
        })
    }
}

impl PointDistance for AdcDistance<'_> {
    #[inline]
    fn squared_distance(&self, point: u32) -> f64 {
        self.pq.adc_unchecked(&self.table, point)
    }
}

/// Result of progressive sampling over one neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborEstimate {
    pub estimated_count: f64,
    pub population: u64,
    pub sampled_total: u64,
    pub sampled_qualified: u64,
    pub global_stop: bool,
    pub rounds: u32,
}

impl NeighborEstimate {
    fn empty() -> Self {
        NeighborEstimate {
            estimated_count: 0.0,
            population: 0,
            sampled_total: 0,
            sampled_qualified: 0,
            global_stop: false,
            rounds: 0,
        }
    }
}

/// Exact count of points in `bucket` within squared distance `tau_sq`.
pub fn count_within<D: PointDistance>(bucket: &[u32], tau_sq: f64, dist: &D) -> u64 {
    bucket
        .iter()
        .filter(|&&p| dist.squared_distance(p) <= tau_sq)
        .count() as u64
}

/// Progressive sampling over a neighborhood population.
///
/// Each round draws a fresh sample without replacement of `⌈rate · |O|⌉`
/// points. Counts accumulate across rounds while the bounds use the current
/// round only. A population small enough that the first round would cover it
/// is scanned once exactly.
pub fn sample_population<D: PointDistance, R: Rng + ?Sized>(
    population: &[u32],
    tau_sq: f64,
    cfg: &ProberConfig,
    dist: &D,
    rng: &mut R,
) -> Result<NeighborEstimate> {
    let n = population.len();
    if n == 0 {
        return Ok(NeighborEstimate::empty());
    }
    let sample_size = |rate: f64| ((rate * n as f64).ceil() as usize).clamp(1, n);

    if sample_size(cfg.s_init) >= n {
        let hits = count_within(population, tau_sq, dist);
        let b = bounds(hits as f64 / n as f64, n as u64, cfg.confidence_a)?;
        return Ok(NeighborEstimate {
            estimated_count: hits as f64,
            population: n as u64,
            sampled_total: n as u64,
            sampled_qualified: hits,
            global_stop: b.mu_upper < cfg.epsilon,
            rounds: 1,
        });
    }

    let mut est = NeighborEstimate {
        population: n as u64,
        ..NeighborEstimate::empty()
    };
    let mut rate = cfg.s_init;
    while rate <= cfg.s_max {
        let w = sample_size(rate);
        let hits = sample(rng, n, w)
            .iter()
            .filter(|&i| dist.squared_distance(population[i]) <= tau_sq)
            .count() as u64;
        let b = bounds(hits as f64 / w as f64, w as u64, cfg.confidence_a)?;
        est.rounds += 1;
        est.sampled_total += w as u64;
        est.sampled_qualified += hits;
        if b.mu_upper < cfg.epsilon {
            est.global_stop = true;
            break;
        }
        if b.mu_upper - b.p_hat <= cfg.epsilon && b.p_hat - b.mu_lower <= cfg.epsilon {
            break;
        }
        rate *= 2.0;
    }
    est.estimated_count = n as f64 * est.sampled_qualified as f64 / est.sampled_total as f64;
    Ok(est)
}

/// Estimator over one immutable LSH index and its neighbor table.
#[derive(Debug, Clone, Copy)]
pub struct Prober<'a> {
    lsh: &'a LshIndex,
    table: &'a NeighborTable,
    cfg: ProberConfig,
}

/// Where the query's neighborhoods come from.
enum Neighborhoods<'a> {
    Table(&'a NeighborTable, u32),
    /// The query code is not a stored code; neighbors were found by scanning.
    Scanned(Vec<Vec<u32>>),
}

impl Neighborhoods<'_> {
    fn codes(&self, k: usize) -> Result<&[u32]> {
        match self {
            Neighborhoods::Table(t, id) => t.lookup(*id, k),
            Neighborhoods::Scanned(groups) => Ok(&groups[k - 1]),
        }
    }
}

impl<'a> Prober<'a> {
    pub fn new(lsh: &'a LshIndex, table: &'a NeighborTable, cfg: ProberConfig) -> Result<Self> {
        cfg.validate()?;
        if lsh.num_codes() != table.num_codes() {
            return Err(Error::param(format!(
                "neighbor table covers {} codes but the LSH index has {}",
                table.num_codes(),
                lsh.num_codes()
            )));
        }
        if let Some(step) = cfg.max_step {
            if step == 0 || step > table.d_max() {
                return Err(Error::param(format!(
                    "probe depth {step} outside 1..={}",
                    table.d_max()
                )));
            }
        }
        Ok(Prober { lsh, table, cfg })
    }

    pub fn config(&self) -> &ProberConfig {
        &self.cfg
    }

    /// Deepest Hamming step this prober will visit.
    pub fn depth(&self) -> usize {
        self.cfg.max_step.unwrap_or(self.table.d_max())
    }

    fn locate(&self, query: &RangeQuery) -> Result<(Option<u32>, Neighborhoods<'a>)> {
        let code = self.lsh.compute_hash_code(&query.point)?;
        Ok(match self.lsh.code_id(&code) {
            Some(id) => (Some(id), Neighborhoods::Table(self.table, id)),
            None => (
                None,
                Neighborhoods::Scanned(scan_neighbors(self.lsh.codes(), &code, self.table.d_max())),
            ),
        })
    }

    fn population(&self, codes: &[u32]) -> Vec<u32> {
        codes
            .iter()
            .flat_map(|&c| self.lsh.bucket(c).iter().copied())
            .collect()
    }

    /// Point ids of the central bucket (index 0) and of each neighborhood
    /// `N_k`, `k = 1..=depth`.
    pub fn neighborhoods(&self, query: &RangeQuery) -> Result<Vec<Vec<u32>>> {
        let (central, hoods) = self.locate(query)?;
        let mut out = vec![central.map(|id| self.lsh.bucket(id).to_vec()).unwrap_or_default()];
        for k in 1..=self.depth() {
            out.push(self.population(hoods.codes(k)?));
        }
        Ok(out)
    }

    /// Exact count inside the query's central bucket; 0 when the query's
    /// code matches no stored bucket.
    pub fn estimate_central<D: PointDistance>(&self, query: &RangeQuery, dist: &D) -> Result<u64> {
        let tau_sq = self.cfg.distance_mode.squared_threshold(query.tau);
        let code = self.lsh.compute_hash_code(&query.point)?;
        Ok(self
            .lsh
            .code_id(&code)
            .map_or(0, |id| count_within(self.lsh.bucket(id), tau_sq, dist)))
    }

    /// Progressive-sampling estimate for the `k`-step neighborhood alone.
    pub fn estimate_neighbor<D: PointDistance, R: Rng + ?Sized>(
        &self,
        k: usize,
        query: &RangeQuery,
        dist: &D,
        rng: &mut R,
    ) -> Result<NeighborEstimate> {
        if k < 1 || k > self.table.d_max() {
            return Err(Error::param(format!("step {k} outside 1..={}", self.table.d_max())));
        }
        let tau_sq = self.cfg.distance_mode.squared_threshold(query.tau);
        let (_, hoods) = self.locate(query)?;
        let population = self.population(hoods.codes(k)?);
        sample_population(&population, tau_sq, &self.cfg, dist, rng)
    }

    /// Full probing loop: central bucket plus neighborhoods until the visit
    /// budget, a global stop, or the maximum depth.
    pub fn estimate<D: PointDistance, R: Rng + ?Sized>(
        &self,
        query: &RangeQuery,
        dist: &D,
        rng: &mut R,
    ) -> Result<Estimate> {
        let tau_sq = self.cfg.distance_mode.squared_threshold(query.tau);
        let (central, hoods) = self.locate(query)?;
        let central_bucket = central.map(|id| self.lsh.bucket(id)).unwrap_or(&[]);
        let mut cardinality = count_within(central_bucket, tau_sq, dist) as f64;

        let max_visit = (self.cfg.max_visit_fraction * self.lsh.num_points() as f64).ceil() as u64;
        let mut visited = 0u64;
        let mut computations = 0u64;
        let mut max_step = 0;
        let mut termination = Termination::AllNeighborsProbed;
        for k in 1..=self.depth() {
            if visited >= max_visit {
                termination = Termination::BudgetExhausted;
                break;
            }
            let population = self.population(hoods.codes(k)?);
            let est = sample_population(&population, tau_sq, &self.cfg, dist, rng)?;
            cardinality += est.estimated_count;
            visited += est.population;
            computations += est.sampled_total;
            max_step = k;
            if est.global_stop {
                termination = Termination::GlobalFlag;
                break;
            }
        }
        Ok(Estimate {
            cardinality,
            points_visited: central_bucket.len() as u64 + visited,
            neighbor_distance_computations: computations,
            max_neighbor_step: max_step,
            termination,
        })
    }
}

/// Uniform-sampling baseline: counts qualifying points in a sample of
/// `⌈fraction · N⌉` points and scales by `N / sample size`.
pub fn sampling_baseline<R: Rng + ?Sized>(
    query: &RangeQuery,
    dataset: &Dataset,
    fraction: f64,
    mode: crate::types::DistanceMode,
    rng: &mut R,
) -> Result<Estimate> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("sampling fraction {fraction} outside (0, 1]")));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dist = ExactDistance::new(dataset, &query.point)?;
    let tau_sq = mode.squared_threshold(query.tau);
    let n = dataset.len();
    let w = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let hits = sample(rng, n, w)
        .iter()
        .filter(|&i| dist.squared_distance(i as u32) <= tau_sq)
        .count();
    Ok(Estimate {
        cardinality: hits as f64 * n as f64 / w as f64,
        points_visited: w as u64,
        neighbor_distance_computations: w as u64,
        max_neighbor_step: 0,
        termination: Termination::BudgetExhausted,
    })
}
