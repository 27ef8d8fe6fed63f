//! An index bundle groups the dataset snapshot, LSH index, neighbor table and
//! optional PQ index, and persists them as a directory:
//!
//! ```text
//! manifest.json   format version, build config, checksums, update lineage
//! data.fvecs      the dataset
//! lsh.bin         hash functions, projections and buckets
//! neighbors.bin   Hamming neighbor lists
//! pq.bin          codebooks and codes (only when PQ is enabled)
//! ```
//!
//! Binary components are little endian. Each file's SHA-256 is recorded in
//! the manifest and verified on load.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::io::{decode_fvecs, encode_fvecs};
use crate::lsh::{LshIndex, LshParams};
use crate::neighbors::{default_d_max, NeighborTable};
use crate::pq::{PqIndex, PqParams};
use crate::prober::{AdcDistance, ExactDistance, Prober};
use crate::types::{Dataset, Estimate, ProberConfig, RangeQuery};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const DATA: &str = "data.fvecs";
const LSH: &str = "lsh.bin";
const NEIGHBORS: &str = "neighbors.bin";
const PQ: &str = "pq.bin";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub lsh: LshParams,
    /// Neighbor table depth; `None` means `min(K, 6)`.
    pub d_max: Option<usize>,
    pub pq: Option<PqParams>,
    /// Retrain PQ codebooks once points added since the last training exceed
    /// this fraction of the points trained on. `None` never retrains.
    pub pq_rebuild_threshold: Option<f64>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            lsh: LshParams::default(),
            d_max: None,
            pq: None,
            pq_rebuild_threshold: None,
        }
    }
}

impl BuildConfig {
    pub fn d_max(&self) -> usize {
        self.d_max.unwrap_or(default_d_max(self.lsh.k_funcs))
    }
}

/// Distance oracle used while estimating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSource {
    #[default]
    Exact,
    Adc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub operation: String,
    pub points_added: u64,
    pub total_points: u64,
    pub width_changed: bool,
    pub neighbors_rebuilt: bool,
    pub pq_retrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub num_points: usize,
    pub num_codes: usize,
    pub width: f64,
    pub config: BuildConfig,
    /// SHA-256 of `data.fvecs`.
    pub dataset_sha256: String,
    /// Points the PQ codebooks were last trained on.
    pub pq_trained_points: usize,
    pub components: BTreeMap<String, String>,
    pub lineage: Vec<LineageEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexBundle {
    dataset: Dataset,
    lsh: LshIndex,
    neighbors: NeighborTable,
    pq: Option<PqIndex>,
    config: BuildConfig,
    pq_trained_points: usize,
    lineage: Vec<LineageEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl IndexBundle {
    pub fn build(dataset: Dataset, config: BuildConfig) -> Result<Self> {
        let lsh = LshIndex::build(&dataset, config.lsh)?;
        let neighbors = NeighborTable::build(&lsh.codes().collect::<Vec<_>>(), config.d_max())?;
        let pq = config.pq.map(|p| PqIndex::train(&dataset, p)).transpose()?;
        let n = dataset.len();
        Ok(IndexBundle {
            lineage: vec![LineageEntry {
                operation: "build".into(),
                points_added: n as u64,
                total_points: n as u64,
                width_changed: false,
                neighbors_rebuilt: true,
                pq_retrained: pq.is_some(),
            }],
            pq_trained_points: if pq.is_some() { n } else { 0 },
            dataset,
            lsh,
            neighbors,
            pq,
            config,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn lsh(&self) -> &LshIndex {
        &self.lsh
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.neighbors
    }

    pub fn pq(&self) -> Option<&PqIndex> {
        self.pq.as_ref()
    }

    pub fn config(&self) -> &BuildConfig {
        &self.config
    }

    pub fn lineage(&self) -> &[LineageEntry] {
        &self.lineage
    }

    pub fn set_pq_rebuild_threshold(&mut self, threshold: Option<f64>) {
        self.config.pq_rebuild_threshold = threshold;
    }

    /// Appends points. The neighbor table is patched when the LSH width is
    /// unchanged and rebuilt otherwise; PQ centroids follow the running mean
    /// unless the retraining threshold is crossed.
    pub fn update(&mut self, new_points: &Dataset) -> Result<&LineageEntry> {
        self.dataset.check_dim(new_points.dim())?;
        let lsh_update = self.lsh.update(new_points)?;
        self.dataset.append(new_points)?;

        let neighbors_rebuilt = lsh_update.width_changed;
        if lsh_update.width_changed {
            self.neighbors = NeighborTable::build(&self.lsh.codes().collect::<Vec<_>>(), self.neighbors.d_max())?;
        } else if self.lsh.num_codes() > lsh_update.previous_codes {
            let codes: Vec<&[i32]> = self.lsh.codes().collect();
            let (old, new) = codes.split_at(lsh_update.previous_codes);
            self.neighbors.update(old, new)?;
        }

        let mut pq_retrained = false;
        if let (Some(pq), Some(params)) = (self.pq.as_mut(), self.config.pq) {
            if !new_points.is_empty() {
                let added = self.dataset.len() - self.pq_trained_points;
                let retrain = self
                    .config
                    .pq_rebuild_threshold
                    .is_some_and(|t| added as f64 > t * self.pq_trained_points as f64);
                if retrain {
                    *pq = PqIndex::train(&self.dataset, params)?;
                    self.pq_trained_points = self.dataset.len();
                    pq_retrained = true;
                } else {
                    pq.update(new_points)?;
                }
            }
        }

        self.lineage.push(LineageEntry {
            operation: "update".into(),
            points_added: new_points.len() as u64,
            total_points: self.dataset.len() as u64,
            width_changed: lsh_update.width_changed,
            neighbors_rebuilt,
            pq_retrained,
        });
        Ok(self.lineage.last().unwrap())
    }

    pub fn prober(&self, cfg: ProberConfig) -> Result<Prober<'_>> {
        Prober::new(&self.lsh, &self.neighbors, cfg)
    }

    /// Runs the prober with the requested distance oracle.
    pub fn estimate<R: Rng + ?Sized>(
        &self,
        prober: &Prober<'_>,
        query: &RangeQuery,
        source: DistanceSource,
        rng: &mut R,
    ) -> Result<Estimate> {
        match source {
            DistanceSource::Exact => {
                let dist = ExactDistance::new(&self.dataset, &query.point)?;
                prober.estimate(query, &dist, rng)
            }
            DistanceSource::Adc => {
                let pq = self.pq.as_ref().ok_or(Error::MissingPq)?;
                let dist = AdcDistance::new(pq, &query.point)?;
                prober.estimate(query, &dist, rng)
            }
        }
    }

    fn component_bytes(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut out = vec![(DATA, encode_fvecs(&self.dataset)?)];
        let mut w = Writer::new();
        self.lsh.encode(&mut w);
        out.push((LSH, w.into_bytes()));
        let mut w = Writer::new();
        self.neighbors.encode(&mut w);
        out.push((NEIGHBORS, w.into_bytes()));
        if let Some(pq) = &self.pq {
            let mut w = Writer::new();
            pq.encode(&mut w);
            out.push((PQ, w.into_bytes()));
        }
        Ok(out)
    }

    fn manifest_with(&self, components: &[(&'static str, Vec<u8>)]) -> Manifest {
        let components: BTreeMap<String, String> = components
            .iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect();
        Manifest {
            format_version: FORMAT_VERSION,
            dim: self.dataset.dim(),
            num_points: self.dataset.len(),
            num_codes: self.lsh.num_codes(),
            width: self.lsh.width(),
            config: self.config,
            dataset_sha256: components[DATA].clone(),
            pq_trained_points: self.pq_trained_points,
            components,
            lineage: self.lineage.clone(),
        }
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Ok(self.manifest_with(&self.component_bytes()?))
    }

    /// Writes the bundle into `dir`, creating it if needed. Stale component
    /// files from an earlier PQ-enabled bundle are removed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let components = self.component_bytes()?;
        for (name, bytes) in &components {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        if self.pq.is_none() {
            let p = dir.join(PQ);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        let manifest = self.manifest_with(&components);
        let p = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let read = |name: &str| -> Result<Vec<u8>> {
            let expected = manifest
                .components
                .get(name)
                .ok_or_else(|| Error::format(dir.join(MANIFEST), format!("no checksum for {name}")))?;
            let p = dir.join(name);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if &sha256_hex(&bytes) != expected {
                return Err(Error::Checksum(name.to_string()));
            }
            Ok(bytes)
        };

        let data = read(DATA)?;
        if sha256_hex(&data) != manifest.dataset_sha256 {
            return Err(Error::Checksum(DATA.to_string()));
        }
        let dataset = decode_fvecs(&data, dir.join(DATA))?;
        let bytes = read(LSH)?;
        let mut r = Reader::new(&bytes, LSH);
        let lsh = LshIndex::decode(&mut r)?;
        r.finish()?;
        let bytes = read(NEIGHBORS)?;
        let mut r = Reader::new(&bytes, NEIGHBORS);
        let neighbors = NeighborTable::decode(&mut r)?;
        r.finish()?;
        let pq = if manifest.components.contains_key(PQ) {
            let bytes = read(PQ)?;
            let mut r = Reader::new(&bytes, PQ);
            let pq = PqIndex::decode(&mut r)?;
            r.finish()?;
            Some(pq)
        } else {
            None
        };

        let inconsistent = |what: &str| Error::format(dir, format!("inconsistent bundle: {what}"));
        if lsh.num_points() != dataset.len() || lsh.dim() != dataset.dim() {
            return Err(inconsistent("LSH index does not cover the dataset"));
        }
        if neighbors.num_codes() != lsh.num_codes() {
            return Err(inconsistent("neighbor table does not match the LSH codes"));
        }
        if let Some(pq) = &pq {
            if pq.num_points() != dataset.len() || pq.dim() != dataset.dim() {
                return Err(inconsistent("PQ index does not cover the dataset"));
            }
        }
        if manifest.num_points != dataset.len() || manifest.dim != dataset.dim() {
            return Err(inconsistent("manifest shape disagrees with data"));
        }
        Ok(IndexBundle {
            dataset,
            lsh,
            neighbors,
            pq,
            config: manifest.config,
            pq_trained_points: manifest.pq_trained_points,
            lineage: manifest.lineage,
        })
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let p = dir.as_ref().join(MANIFEST);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new(d, (0..n * d).map(|_| rng.random_range(-5.0f32..5.0)).collect()).unwrap()
    }

    fn config(pq: bool) -> BuildConfig {
        BuildConfig {
            lsh: LshParams {
                k_funcs: 8,
                target_values: 4,
                seed: 3,
            },
            d_max: Some(4),
            pq: pq.then_some(PqParams {
                m_subspaces: 4,
                k_clusters: 16,
                kmeans_iters: 5,
                seed: 1,
                train_sample: None,
            }),
            pq_rebuild_threshold: None,
        }
    }

    fn run(bundle: &IndexBundle, queries: &[RangeQuery], source: DistanceSource) -> Vec<Estimate> {
        let prober = bundle.prober(ProberConfig::default()).unwrap();
        queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                bundle.estimate(&prober, q, source, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = dataset(800, 8, 1);
        let queries: Vec<RangeQuery> = (0..10)
            .map(|i| RangeQuery::new(ds.row(i * 13).to_vec(), 40.0).unwrap())
            .collect();
        let bundle = IndexBundle::build(ds, config(true)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let saved = bundle.save(dir.path()).unwrap();
        let loaded = IndexBundle::load(dir.path()).unwrap();
        assert_eq!(loaded, bundle);
        assert_eq!(loaded.manifest().unwrap(), saved);
        for source in [DistanceSource::Exact, DistanceSource::Adc] {
            assert_eq!(run(&bundle, &queries, source), run(&loaded, &queries, source));
        }
    }

    #[test]
    fn load_failures() {
        let dir = tempfile::tempdir().unwrap();
        assert!(IndexBundle::load(dir.path()).is_err());

        let bundle = IndexBundle::build(dataset(300, 8, 2), config(true)).unwrap();
        bundle.save(dir.path()).unwrap();
        let pq_path = dir.path().join(PQ);
        let mut bytes = std::fs::read(&pq_path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&pq_path, &bytes).unwrap();
        assert!(matches!(IndexBundle::load(dir.path()), Err(Error::Checksum(c)) if c == PQ));

        bundle.save(dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&mp).unwrap();
        std::fs::write(&mp, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
        assert!(matches!(IndexBundle::load(dir.path()), Err(Error::Version { found: 99, .. })));
    }

    #[test]
    fn adc_requires_pq() {
        let bundle = IndexBundle::build(dataset(200, 8, 3), config(false)).unwrap();
        let prober = bundle.prober(ProberConfig::default()).unwrap();
        let q = RangeQuery::new(vec![0.0; 8], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            bundle.estimate(&prober, &q, DistanceSource::Adc, &mut rng),
            Err(Error::MissingPq)
        ));
        assert!(bundle.estimate(&prober, &q, DistanceSource::Exact, &mut rng).is_ok());
    }

    #[test]
    fn empty_update_only_extends_lineage() {
        let mut bundle = IndexBundle::build(dataset(300, 8, 4), config(true)).unwrap();
        let before = bundle.clone();
        bundle.update(&Dataset::empty(8).unwrap()).unwrap();
        assert_eq!(bundle.lsh, before.lsh);
        assert_eq!(bundle.neighbors, before.neighbors);
        assert_eq!(bundle.pq, before.pq);
        assert_eq!(bundle.dataset, before.dataset);
        assert_eq!(bundle.lineage.len(), 2);
        assert!(bundle.update(&Dataset::empty(3).unwrap()).is_err());
    }

    #[test]
    fn split_build_matches_full_build() {
        let ds = dataset(2_000, 8, 5);
        let full = IndexBundle::build(ds.clone(), config(false)).unwrap();
        let (head, tail) = ds.split_at(200);
        let mut inc = IndexBundle::build(head, config(false)).unwrap();
        let (a, b) = tail.split_at(900);
        inc.update(&a).unwrap();
        inc.update(&b).unwrap();
        assert_eq!(inc.lsh, full.lsh);
        assert_eq!(inc.neighbors, full.neighbors);
        assert_eq!(inc.dataset, full.dataset);
    }

    #[test]
    fn pq_retrains_past_threshold() {
        let ds = dataset(1_000, 8, 6);
        let (head, tail) = ds.split_at(400);
        let mut cfg = config(true);
        cfg.pq_rebuild_threshold = Some(0.5);
        let mut bundle = IndexBundle::build(head, cfg).unwrap();
        let (small, rest) = tail.split_at(100);
        assert!(!bundle.update(&small).unwrap().pq_retrained);
        // 100 + 500 added against 400 trained crosses 0.5.
        assert!(bundle.update(&rest).unwrap().pq_retrained);
        assert_eq!(bundle.pq().unwrap().num_points(), 1_000);
        let retrained = PqIndex::train(bundle.dataset(), cfg.pq.unwrap()).unwrap();
        assert_eq!(bundle.pq().unwrap(), &retrained);
    }

    #[test]
    fn save_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        IndexBundle::build(dataset(500, 8, 7), config(true)).unwrap().save(a.path()).unwrap();
        IndexBundle::build(dataset(500, 8, 7), config(true)).unwrap().save(b.path()).unwrap();
        for name in [MANIFEST, DATA, LSH, NEIGHBORS, PQ] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }
}
