//! Product quantization with asymmetric distance computation (ADC).
//!
//! Vectors are split into `M` contiguous subvectors of `d / M` components.
//! Each subspace owns a k-means codebook of `K_c` centroids and every stored
//! point is represented by one centroid id per subspace. At query time an
//! [`AdcTable`] holds the squared distance from each query subvector to each
//! centroid, so a point's distance is `M` table lookups.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Reader, Writer};
use crate::distance::{squared_l2, squared_l2_f32};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PqParams {
    pub m_subspaces: usize,
    pub k_clusters: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Train codebooks on at most this many uniformly sampled points; all
    /// points are encoded afterwards.
    pub train_sample: Option<usize>,
}

impl PqParams {
    /// Byte-sized codes with `M = 8` (or the largest divisor of `dim` below 8).
    pub fn for_dim(dim: usize) -> Self {
        PqParams {
            m_subspaces: default_m(dim),
            k_clusters: 256,
            kmeans_iters: 25,
            seed: 0,
            train_sample: None,
        }
    }
}

pub fn default_m(dim: usize) -> usize {
    (1..=8.min(dim)).rev().find(|m| dim % m == 0).unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqIndex {
    dim: usize,
    m: usize,
    k_clusters: usize,
    sub_dim: usize,
    /// `M × K_c × sub_dim`.
    codebooks: Vec<f32>,
    /// `N × M` centroid ids.
    codes: Vec<u16>,
    /// `M × K_c` member counts.
    cluster_sizes: Vec<u64>,
}

/// Per-iteration k-means inertia of each subspace, recorded at every
/// assignment step over the training sample.
#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    pub inertia: Vec<Vec<f64>>,
}

/// Query-specific table of squared subvector-to-centroid distances.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcTable {
    m: usize,
    k_clusters: usize,
    entries: Vec<f64>,
}

impl AdcTable {
    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.k_clusters
    }

    pub fn get(&self, subspace: usize, centroid: usize) -> f64 {
        self.entries[subspace * self.k_clusters + centroid]
    }
}

impl PqIndex {
    pub fn train(dataset: &Dataset, params: PqParams) -> Result<Self> {
        Self::train_with_trace(dataset, params).map(|(pq, _)| pq)
    }

    pub fn train_with_trace(dataset: &Dataset, params: PqParams) -> Result<(Self, TrainingTrace)> {
        let dim = dataset.dim();
        let PqParams {
            m_subspaces: m,
            k_clusters,
            kmeans_iters,
            seed,
            train_sample,
        } = params;
        if m == 0 || dim % m != 0 {
            return Err(Error::param(format!("M = {m} does not divide dimension {dim}")));
        }
        if k_clusters == 0 || k_clusters > usize::from(u16::MAX) + 1 {
            return Err(Error::param(format!("K_c = {k_clusters} outside 1..=65536")));
        }
        if k_clusters > dataset.len() {
            return Err(Error::param(format!(
                "K_c = {k_clusters} exceeds dataset size {}",
                dataset.len()
            )));
        }
        if kmeans_iters == 0 {
            return Err(Error::param("kmeans_iters must be >= 1"));
        }
        let sub_dim = dim / m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let train_ids: Vec<usize> = match train_sample {
            Some(s) if s < dataset.len() => {
                let s = s.max(k_clusters);
                let mut ids = sample(&mut rng, dataset.len(), s).into_vec();
                ids.sort_unstable();
                ids
            }
            _ => (0..dataset.len()).collect(),
        };

        let mut codebooks = Vec::with_capacity(m * k_clusters * sub_dim);
        let mut trace = TrainingTrace::default();
        for sp in 0..m {
            let range = sp * sub_dim..(sp + 1) * sub_dim;
            let subs: Vec<f32> = train_ids
                .iter()
                .flat_map(|&id| dataset.row(id)[range.clone()].iter().copied())
                .collect();
            let (centroids, inertia) = kmeans(&subs, sub_dim, k_clusters, kmeans_iters, &mut rng);
            codebooks.extend_from_slice(&centroids);
            trace.inertia.push(inertia);
        }

        let mut pq = PqIndex {
            dim,
            m,
            k_clusters,
            sub_dim,
            codebooks,
            codes: Vec::with_capacity(dataset.len() * m),
            cluster_sizes: vec![0; m * k_clusters],
        };
        for row in dataset.rows() {
            for sp in 0..m {
                let c = pq.nearest(sp, &row[sp * sub_dim..(sp + 1) * sub_dim]);
                pq.codes.push(c as u16);
                pq.cluster_sizes[sp * k_clusters + c] += 1;
            }
        }
        Ok((pq, trace))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m_subspaces(&self) -> usize {
        self.m
    }

    pub fn k_clusters(&self) -> usize {
        self.k_clusters
    }

    pub fn num_points(&self) -> usize {
        self.codes.len() / self.m
    }

    pub fn centroid(&self, subspace: usize, c: usize) -> &[f32] {
        let start = (subspace * self.k_clusters + c) * self.sub_dim;
        &self.codebooks[start..start + self.sub_dim]
    }

    pub fn code(&self, point: u32) -> &[u16] {
        let p = point as usize;
        &self.codes[p * self.m..(p + 1) * self.m]
    }

    pub fn cluster_size(&self, subspace: usize, c: usize) -> u64 {
        self.cluster_sizes[subspace * self.k_clusters + c]
    }

    /// Concatenation of a point's assigned centroids.
    pub fn reconstruct(&self, point: u32) -> Result<Vec<f32>> {
        self.check_point(point)?;
        Ok(self
            .code(point)
            .iter()
            .enumerate()
            .flat_map(|(sp, &c)| self.centroid(sp, c as usize).iter().copied())
            .collect())
    }

    fn nearest(&self, subspace: usize, sub: &[f32]) -> usize {
        nearest_centroid(
            &self.codebooks[subspace * self.k_clusters * self.sub_dim..][..self.k_clusters * self.sub_dim],
            self.sub_dim,
            sub,
        )
        .0
    }

    fn check_point(&self, point: u32) -> Result<()> {
        if point as usize >= self.num_points() {
            return Err(Error::UnknownPoint(point));
        }
        Ok(())
    }

    pub fn build_adc_table(&self, x: &[f32]) -> Result<AdcTable> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut entries = Vec::with_capacity(self.m * self.k_clusters);
        for sp in 0..self.m {
            let sub = &x[sp * self.sub_dim..(sp + 1) * self.sub_dim];
            for c in 0..self.k_clusters {
                entries.push(squared_l2(sub, self.centroid(sp, c)));
            }
        }
        Ok(AdcTable {
            m: self.m,
            k_clusters: self.k_clusters,
            entries,
        })
    }

    /// Squared asymmetric distance between the table's query and a point.
    pub fn adc_distance(&self, table: &AdcTable, point: u32) -> Result<f64> {
        self.check_point(point)?;
        if table.m != self.m || table.k_clusters != self.k_clusters {
            return Err(Error::param("ADC table shape does not match the index"));
        }
        Ok(self.adc_unchecked(table, point))
    }

    #[inline]
    pub(crate) fn adc_unchecked(&self, table: &AdcTable, point: u32) -> f64 {
        let mut acc = 0.0;
        for (sp, &c) in self.code(point).iter().enumerate() {
            acc += table.entries[sp * self.k_clusters + c as usize];
        }
        acc
    }

    /// Encodes new points against the existing codebooks and moves each
    /// touched centroid to the running mean of its members. Codes of
    /// existing points are left as they are.
    pub fn update(&mut self, new_points: &Dataset) -> Result<()> {
        if new_points.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: new_points.dim(),
            });
        }
        for row in new_points.rows() {
            for sp in 0..self.m {
                let sub = &row[sp * self.sub_dim..(sp + 1) * self.sub_dim];
                let c = self.nearest(sp, sub);
                let slot = sp * self.k_clusters + c;
                let n = self.cluster_sizes[slot] as f64;
                let start = slot * self.sub_dim;
                for (centre, v) in self.codebooks[start..start + self.sub_dim].iter_mut().zip(sub) {
                    let c0 = f64::from(*centre);
                    *centre = (c0 + (f64::from(*v) - c0) / (n + 1.0)) as f32;
                }
                self.cluster_sizes[slot] += 1;
                self.codes.push(c as u16);
            }
        }
        Ok(())
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.usize(self.dim);
        w.usize(self.m);
        w.usize(self.k_clusters);
        w.f32s(&self.codebooks);
        w.u16s(&self.codes);
        w.u64s(&self.cluster_sizes);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let dim = r.usize()?;
        let m = r.usize()?;
        let k_clusters = r.usize()?;
        let codebooks = r.f32s()?;
        let codes = r.u16s()?;
        let cluster_sizes = r.u64s()?;
        if m == 0 || dim % m != 0 {
            return Err(r.corrupt("inconsistent PQ header"));
        }
        let sub_dim = dim / m;
        if codebooks.len() != m * k_clusters * sub_dim
            || codes.len() % m != 0
            || cluster_sizes.len() != m * k_clusters
            || codes.iter().any(|&c| usize::from(c) >= k_clusters)
        {
            return Err(r.corrupt("inconsistent PQ payload"));
        }
        Ok(PqIndex {
            dim,
            m,
            k_clusters,
            sub_dim,
            codebooks,
            codes,
            cluster_sizes,
        })
    }
}

fn nearest_centroid(centroids: &[f32], sub_dim: usize, x: &[f32]) -> (usize, f64) {
    let mut best = (0, f32::INFINITY);
    for (c, centre) in centroids.chunks_exact(sub_dim).enumerate() {
        let d = squared_l2_f32(x, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    (best.0, squared_l2(x, &centroids[best.0 * sub_dim..][..sub_dim]))
}

/// Lloyd's algorithm with k-means++ seeding. Returns the centroids and the
/// inertia measured at each assignment step (`iters + 1` values).
fn kmeans(points: &[f32], dim: usize, k: usize, iters: usize, rng: &mut impl Rng) -> (Vec<f32>, Vec<f64>) {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    // k-means++ seeding.
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut closest: Vec<f64> = (0..n).map(|i| squared_l2(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in closest.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Guard against rounding landing on an already chosen point.
            if closest[chosen] == 0.0 {
                chosen = closest
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(squared_l2(row(i), &centroids[start..]));
        }
    }

    let mut assign = vec![0usize; n];
    let mut dists = vec![0f64; n];
    let mut inertia = Vec::with_capacity(iters + 1);
    let assign_step = |centroids: &[f32], assign: &mut [usize], dists: &mut [f64]| {
        let mut total = 0.0;
        for i in 0..n {
            let (c, d) = nearest_centroid(centroids, dim, row(i));
            assign[i] = c;
            dists[i] = d;
            total += d;
        }
        total
    };

    for _ in 0..iters {
        inertia.push(assign_step(&centroids, &mut assign, &mut dists));

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(row(i)) {
                *s += f64::from(*v);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *dst = (s * inv) as f32;
                }
            }
        }
        // Empty clusters take over the point farthest from its centroid.
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let (far, d) = dists
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, d)| (i, *d))
                .unwrap();
            if d == 0.0 {
                break;
            }
            centroids[c * dim..(c + 1) * dim].copy_from_slice(row(far));
            dists[far] = 0.0;
        }
    }
    inertia.push(assign_step(&centroids, &mut assign, &mut dists));
    (centroids, inertia)
}
