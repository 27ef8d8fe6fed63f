//! E2LSH partitioning of a dataset into a single hash table.
//!
//! Each of the `K` hash functions is `h(o) = ⌊(a·o + b) / W⌋` with `a` drawn
//! from the standard normal distribution. The bucket width `W` is not a
//! fixed parameter: it is derived from the spread of the projections so that
//! every function produces roughly `target_values` distinct tokens, and it is
//! re-derived whenever points are added.
//!
//! The offset of function `i` is stored as a fraction `u_i ∈ [0, 1)` and
//! materialised as `b_i = u_i · W`. Width and offsets therefore depend only on
//! the seed and on the global projection range, which makes a build followed
//! by updates indistinguishable from a single build over the union.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codec::{Reader, Writer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Dataset;

/// A hash code: one token per hash function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashCode(pub Vec<i32>);

impl HashCode {
    pub fn tokens(&self) -> &[i32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for HashCode {
    type Target = [i32];
    fn deref(&self) -> &[i32] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshParams {
    pub k_funcs: usize,
    pub target_values: usize,
    pub seed: u64,
}

impl Default for LshParams {
    fn default() -> Self {
        LshParams {
            k_funcs: 12,
            target_values: 4,
            seed: 0,
        }
    }
}

/// `W = (max − min) / target` over every projection value.
///
/// ```
/// use probecard::lsh::normalize_w;
/// assert_eq!(normalize_w([0.0, 17.0, 40.0], 4).unwrap(), 10.0);
/// assert_eq!(normalize_w([-5.0, 5.0], 4).unwrap(), 2.5);
/// ```
pub fn normalize_w(projections: impl IntoIterator<Item = f64>, target_values: usize) -> Result<f64> {
    if target_values < 2 {
        return Err(Error::param("target_values_per_func must be >= 2"));
    }
    let (min, max) = min_max(projections).ok_or(Error::EmptyDataset)?;
    width_from_range(min, max, target_values)
}

fn min_max(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    values.into_iter().fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn width_from_range(min: f64, max: f64, target_values: usize) -> Result<f64> {
    let w = (max - min) / target_values as f64;
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::Degenerate(format!(
            "all projections lie in [{min}, {max}]; cannot derive a bucket width"
        )));
    }
    Ok(w)
}

/// Outcome of [`LshIndex::update`], used to decide how the neighbor table
/// must follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LshUpdate {
    pub width_changed: bool,
    /// Code count before the update. When the width is unchanged, code ids
    /// below this value are untouched and new codes were appended after it.
    pub previous_codes: usize,
    pub added_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LshIndex {
    dim: usize,
    params: LshParams,
    /// `K × dim` Gaussian directions, row-major.
    directions: Vec<f64>,
    /// Offset fractions `u_i`; `b_i = u_i · W`.
    offset_fracs: Vec<f64>,
    width: f64,
    proj_min: f64,
    proj_max: f64,
    /// `N × K` values of `a_i · o`.
    projections: Vec<f64>,
    /// Distinct codes, `C × K`, in order of first appearance by point id.
    codes: Vec<i32>,
    code_ids: HashMap<Vec<i32>, u32>,
    buckets: Vec<Vec<u32>>,
    point_codes: Vec<u32>,
}

impl LshIndex {
    pub fn build(dataset: &Dataset, params: LshParams) -> Result<Self> {
        if params.k_funcs < 1 {
            return Err(Error::param("k_funcs must be >= 1"));
        }
        if params.target_values < 2 {
            return Err(Error::param("target_values_per_func must be >= 2"));
        }
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = dataset.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let directions: Vec<f64> = (0..params.k_funcs * dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let offset_fracs: Vec<f64> = (0..params.k_funcs).map(|_| rng.random::<f64>()).collect();

        let mut index = LshIndex {
            dim,
            params,
            directions,
            offset_fracs,
            width: 0.0,
            proj_min: f64::INFINITY,
            proj_max: f64::NEG_INFINITY,
            projections: Vec::with_capacity(dataset.len() * params.k_funcs),
            codes: Vec::new(),
            code_ids: HashMap::new(),
            buckets: Vec::new(),
            point_codes: Vec::with_capacity(dataset.len()),
        };
        index.push_projections(dataset);
        index.width = width_from_range(index.proj_min, index.proj_max, params.target_values)?;
        index.rebuild_table();
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_funcs(&self) -> usize {
        self.params.k_funcs
    }

    pub fn params(&self) -> LshParams {
        self.params
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Offset `b_i` of hash function `i` under the current width.
    pub fn offset(&self, i: usize) -> f64 {
        self.offset_fracs[i] * self.width
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn num_points(&self) -> usize {
        self.point_codes.len()
    }

    pub fn num_codes(&self) -> usize {
        self.buckets.len()
    }

    pub fn code(&self, id: u32) -> &[i32] {
        let k = self.params.k_funcs;
        &self.codes[id as usize * k..(id as usize + 1) * k]
    }

    pub fn codes(&self) -> impl ExactSizeIterator<Item = &[i32]> + '_ {
        self.codes.chunks_exact(self.params.k_funcs)
    }

    /// The code array as owned [`HashCode`]s, indexed by code id.
    pub fn code_list(&self) -> Vec<HashCode> {
        self.codes().map(|c| HashCode(c.to_vec())).collect()
    }

    pub fn code_id(&self, code: &[i32]) -> Option<u32> {
        self.code_ids.get(code).copied()
    }

    pub fn bucket(&self, code_id: u32) -> &[u32] {
        &self.buckets[code_id as usize]
    }

    pub fn buckets(&self) -> &[Vec<u32>] {
        &self.buckets
    }

    pub fn point_code(&self, point: u32) -> u32 {
        self.point_codes[point as usize]
    }

    /// Raw value `a_i · o + b_i` of a stored point, before division by `W`.
    pub fn raw_projection(&self, point: u32, i: usize) -> f64 {
        self.projections[point as usize * self.params.k_funcs + i] + self.offset(i)
    }

    pub fn compute_hash_code(&self, x: &[f32]) -> Result<HashCode> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut tokens = Vec::with_capacity(self.params.k_funcs);
        for i in 0..self.params.k_funcs {
            tokens.push(self.token(i, self.project(i, x)));
        }
        Ok(HashCode(tokens))
    }

    #[inline]
    fn project(&self, i: usize, x: &[f32]) -> f64 {
        self.direction(i)
            .iter()
            .zip(x)
            .map(|(a, v)| a * f64::from(*v))
            .sum()
    }

    #[inline]
    fn token(&self, i: usize, projection: f64) -> i32 {
        ((projection + self.offset(i)) / self.width).floor() as i32
    }

    fn push_projections(&mut self, dataset: &Dataset) {
        for row in dataset.rows() {
            for i in 0..self.params.k_funcs {
                let p = self.project(i, row);
                self.proj_min = self.proj_min.min(p);
                self.proj_max = self.proj_max.max(p);
                self.projections.push(p);
            }
        }
    }

    fn assign_codes_from(&mut self, first_point: usize) {
        let k = self.params.k_funcs;
        let mut tokens = vec![0i32; k];
        for point in first_point..self.projections.len() / k {
            for (i, t) in tokens.iter_mut().enumerate() {
                *t = self.token(i, self.projections[point * k + i]);
            }
            let id = match self.code_ids.get(tokens.as_slice()) {
                Some(&id) => id,
                None => {
                    let id = self.buckets.len() as u32;
                    self.code_ids.insert(tokens.clone(), id);
                    self.codes.extend_from_slice(&tokens);
                    self.buckets.push(Vec::new());
                    id
                }
            };
            self.buckets[id as usize].push(point as u32);
            self.point_codes.push(id);
        }
    }

    fn rebuild_table(&mut self) {
        self.codes.clear();
        self.code_ids.clear();
        self.buckets.clear();
        self.point_codes.clear();
        self.assign_codes_from(0);
    }

    /// Adds points with the original hash functions. The width is
    /// re-derived over old and new projections; if it changes, every code is
    /// recomputed and the table rebuilt, otherwise new points are appended.
    pub fn update(&mut self, new_points: &Dataset) -> Result<LshUpdate> {
        if new_points.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: new_points.dim(),
            });
        }
        let previous_codes = self.num_codes();
        let first_new = self.num_points();
        if new_points.is_empty() {
            return Ok(LshUpdate {
                width_changed: false,
                previous_codes,
                added_points: 0,
            });
        }
        self.push_projections(new_points);
        let width = width_from_range(self.proj_min, self.proj_max, self.params.target_values)?;
        let width_changed = width.to_bits() != self.width.to_bits();
        self.width = width;
        if width_changed {
            self.rebuild_table();
        } else {
            self.assign_codes_from(first_new);
        }
        Ok(LshUpdate {
            width_changed,
            previous_codes,
            added_points: new_points.len(),
        })
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.usize(self.dim);
        w.usize(self.params.k_funcs);
        w.usize(self.params.target_values);
        w.u64(self.params.seed);
        w.f64s(&self.directions);
        w.f64s(&self.offset_fracs);
        w.f64(self.width);
        w.f64(self.proj_min);
        w.f64(self.proj_max);
        w.f64s(&self.projections);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let dim = r.usize()?;
        let params = LshParams {
            k_funcs: r.usize()?,
            target_values: r.usize()?,
            seed: r.u64()?,
        };
        let directions = r.f64s()?;
        let offset_fracs = r.f64s()?;
        let width = r.f64()?;
        let proj_min = r.f64()?;
        let proj_max = r.f64()?;
        let projections = r.f64s()?;
        let k = params.k_funcs;
        if k == 0
            || directions.len() != k * dim
            || offset_fracs.len() != k
            || projections.len() % k != 0
            || !(width > 0.0)
        {
            return Err(r.corrupt("inconsistent LSH header"));
        }
        let mut index = LshIndex {
            dim,
            params,
            directions,
            offset_fracs,
            width,
            proj_min,
            proj_max,
            projections,
            codes: Vec::new(),
            code_ids: HashMap::new(),
            buckets: Vec::new(),
            point_codes: Vec::new(),
        };
        index.rebuild_table();
        Ok(index)
    }
}
