//! Shared domain types: datasets, range queries, prober configuration and
//! estimation results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense, row-major collection of `d`-dimensional `f32` vectors.
///
/// Point ids are the row indices `0..len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f32>,
}

impl Dataset {
    /// Wraps a flat row-major buffer. Rejects `dim == 0`, ragged buffers and
    /// non-finite values.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::param(format!(
                "buffer of {} floats is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                vector: pos / dim,
                component: pos % dim,
            });
        }
        Ok(Dataset { dim, data })
    }

    /// An empty dataset of the given dimension.
    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or(Error::EmptyDataset)?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies the given rows into a new dataset, in the given order.
    pub fn select(&self, ids: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            data.extend_from_slice(self.row(id));
        }
        Dataset {
            dim: self.dim,
            data,
        }
    }

    /// Splits into `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> (Dataset, Dataset) {
        let (a, b) = self.data.split_at(at * self.dim);
        (
            Dataset {
                dim: self.dim,
                data: a.to_vec(),
            },
            Dataset {
                dim: self.dim,
                data: b.to_vec(),
            },
        )
    }

    /// Appends all rows of `other`; new points receive the next ids.
    pub fn append(&mut self, other: &Dataset) -> Result<()> {
        self.check_dim(other.dim)?;
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub(crate) fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }
}

/// How query thresholds are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// `τ` is compared against squared Euclidean distances directly.
    #[default]
    SquaredL2,
    /// `τ` is a Euclidean distance; it is squared once at query entry.
    L2,
}

impl DistanceMode {
    /// The threshold in squared units.
    pub fn squared_threshold(self, tau: f64) -> f64 {
        match self {
            DistanceMode::SquaredL2 => tau,
            DistanceMode::L2 => tau * tau,
        }
    }
}

/// A range query `(q, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeQuery {
    pub point: Vec<f32>,
    pub tau: f64,
}

impl RangeQuery {
    pub fn new(point: Vec<f32>, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::param(format!("threshold must be >= 0, got {tau}")));
        }
        if let Some(component) = point.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                vector: 0,
                component,
            });
        }
        Ok(RangeQuery { point, tau })
    }
}

/// Parameters of the online estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProberConfig {
    /// Error tolerance `ε` of the sampling bounds.
    pub epsilon: f64,
    /// Confidence constant `a = ln(1 / Pr_fail)`.
    pub confidence_a: f64,
    /// Initial sampling rate.
    pub s_init: f64,
    /// Maximum sampling rate; the doubling schedule stops above it.
    pub s_max: f64,
    /// Fraction of the dataset whose neighbor population may be visited.
    pub max_visit_fraction: f64,
    pub distance_mode: DistanceMode,
    /// Optional cap on the probed Hamming step, at most the table's `d_max`.
    pub max_step: Option<usize>,
}

impl Default for ProberConfig {
    fn default() -> Self {
        ProberConfig {
            epsilon: 1e-4,
            confidence_a: 1000f64.ln(),
            s_init: 1.0 / 64.0,
            s_max: 0.5,
            max_visit_fraction: 0.01,
            distance_mode: DistanceMode::SquaredL2,
            max_step: None,
        }
    }
}

impl ProberConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon must be > 0"));
        }
        if !(self.confidence_a > 0.0) {
            return Err(Error::param("confidence constant a must be > 0"));
        }
        if !(self.s_init > 0.0 && self.s_init <= self.s_max && self.s_max <= 1.0) {
            return Err(Error::param("sampling rates must satisfy 0 < s_init <= s_max <= 1"));
        }
        if !(self.max_visit_fraction > 0.0 && self.max_visit_fraction <= 1.0) {
            return Err(Error::param("max_visit_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Why the probing loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BudgetExhausted,
    GlobalFlag,
    AllNeighborsProbed,
}

/// Estimated cardinality plus diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub cardinality: f64,
    /// Points in the central bucket and every probed neighbor population.
    pub points_visited: u64,
    /// Distance evaluations performed outside the central bucket.
    pub neighbor_distance_computations: u64,
    /// Largest Hamming step probed (0 when only the central bucket was used).
    pub max_neighbor_step: usize,
    pub termination: Termination,
}
