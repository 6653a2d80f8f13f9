//! Seeded pool assignment and query-set construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSizes {
    pub train: usize,
    pub test: usize,
    pub calibration: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pools {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
    pub calibration: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryKind {
    /// Fully inside the training pool.
    #[serde(rename = "QO")]
    Overlapping,
    /// Fully outside the training pool.
    #[serde(rename = "QNO")]
    Disjoint,
    /// A fraction `k` inside the training pool.
    #[serde(rename = "QM")]
    Mixed,
    /// Training samples designated to be forgotten.
    #[serde(rename = "QF")]
    Forget,
}

impl QueryKind {
    pub fn tag(self) -> &'static str {
        match self {
            QueryKind::Overlapping => "QO",
            QueryKind::Disjoint => "QNO",
            QueryKind::Mixed => "QM",
            QueryKind::Forget => "QF",
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for QueryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "QO" => Ok(QueryKind::Overlapping),
            "QNO" => Ok(QueryKind::Disjoint),
            "QM" => Ok(QueryKind::Mixed),
            "QF" => Ok(QueryKind::Forget),
            other => Err(Error::Parse(format!("unknown query kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub name: String,
    pub kind: QueryKind,
    pub ids: Vec<u64>,
    pub size: usize,
    pub overlap_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub dataset_name: String,
    pub seed: u64,
    pub pools: Pools,
    pub counts: BTreeMap<String, usize>,
    /// Calibration is required to be disjoint from train only; this records any
    /// overlap it has with the test pool.
    pub calibration_test_overlap: usize,
    pub query_sets: BTreeMap<String, QuerySet>,
}

/// `round(k·n)` with halves rounded up.
pub fn overlap_count(k: f64, n: usize) -> usize {
    (k * n as f64 + 0.5).floor() as usize
}

fn shuffled(mut ids: Vec<u64>, rng: &mut ChaCha8Rng) -> Vec<u64> {
    ids.sort_unstable();
    ids.shuffle(rng);
    ids
}

fn sorted(mut ids: Vec<u64>) -> Vec<u64> {
    ids.sort_unstable();
    ids
}

/// Draws disjoint train/test/calibration pools uniformly without replacement.
pub fn sample_splits(dataset: &Dataset, sizes: PoolSizes, seed: u64) -> Result<SplitManifest> {
    let total = sizes.train + sizes.test + sizes.calibration;
    if total > dataset.len() {
        return Err(Error::Capacity(format!(
            "requested {total} samples across pools but dataset {} has {}",
            dataset.name,
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = shuffled(dataset.ids(), &mut rng);
    let (train, rest) = order.split_at(sizes.train);
    let (test, rest) = rest.split_at(sizes.test);
    let calibration = &rest[..sizes.calibration];
    let pools = Pools {
        train: sorted(train.to_vec()),
        test: sorted(test.to_vec()),
        calibration: sorted(calibration.to_vec()),
    };
    let mut manifest = SplitManifest {
        version: MANIFEST_VERSION,
        dataset_name: dataset.name.clone(),
        seed,
        calibration_test_overlap: 0,
        counts: BTreeMap::new(),
        pools,
        query_sets: BTreeMap::new(),
    };
    manifest.refresh_counts();
    Ok(manifest)
}

fn query_name(kind: QueryKind, n: usize, k: f64) -> String {
    match kind {
        QueryKind::Mixed => format!("QM_k{k:.2}_N{n}"),
        _ => format!("{}_N{n}", kind.tag()),
    }
}

/// Builds a query set of `n` ids and records it in the manifest.
///
/// Non-member ids are drawn from dataset ids outside both the training and
/// calibration pools. `k` is ignored for QO/QNO/QF, which fix it to 1/0/1.
pub fn build_query_set(
    manifest: &mut SplitManifest,
    dataset: &Dataset,
    kind: QueryKind,
    n: usize,
    k: f64,
    seed: u64,
) -> Result<QuerySet> {
    let k = match kind {
        QueryKind::Overlapping | QueryKind::Forget => 1.0,
        QueryKind::Disjoint => 0.0,
        QueryKind::Mixed => {
            if !(0.0..=1.0).contains(&k) {
                return Err(Error::Domain(format!("overlap fraction {k} outside [0, 1]")));
            }
            k
        }
    };
    let inside = overlap_count(k, n);
    let outside = n - inside;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let excluded: HashSet<u64> = manifest
        .pools
        .train
        .iter()
        .chain(&manifest.pools.calibration)
        .copied()
        .collect();
    let members = shuffled(manifest.pools.train.clone(), &mut rng);
    let nonmembers = shuffled(
        dataset.ids().into_iter().filter(|id| !excluded.contains(id)).collect(),
        &mut rng,
    );
    if inside > members.len() {
        return Err(Error::Capacity(format!(
            "need {inside} training ids, pool has {}",
            members.len()
        )));
    }
    if outside > nonmembers.len() {
        return Err(Error::Capacity(format!(
            "need {outside} ids outside the training pool, only {} available",
            nonmembers.len()
        )));
    }
    let mut ids: Vec<u64> = members[..inside].to_vec();
    ids.extend_from_slice(&nonmembers[..outside]);
    ids.sort_unstable();

    let query = QuerySet {
        name: query_name(kind, n, k),
        kind,
        ids,
        size: n,
        overlap_fraction: k,
    };
    manifest.query_sets.insert(query.name.clone(), query.clone());
    Ok(query)
}

/// Draws a smaller forget set nested inside `parent`, recorded in the manifest.
pub fn sub_query_set(
    manifest: &mut SplitManifest,
    parent: &QuerySet,
    n: usize,
    seed: u64,
) -> Result<QuerySet> {
    if n > parent.ids.len() {
        return Err(Error::Capacity(format!(
            "cannot draw {n} ids from query `{}` of size {}",
            parent.name,
            parent.ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = sorted(shuffled(parent.ids.clone(), &mut rng)[..n].to_vec());
    let query = QuerySet {
        name: query_name(parent.kind, n, parent.overlap_fraction),
        kind: parent.kind,
        ids,
        size: n,
        overlap_fraction: parent.overlap_fraction,
    };
    manifest.query_sets.insert(query.name.clone(), query.clone());
    Ok(query)
}

/// The fraction `k` of the training pool left after removing `forget`.
pub fn partial_train_ids(
    manifest: &SplitManifest,
    forget: &QuerySet,
    k: f64,
    seed: u64,
) -> Result<Vec<u64>> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::Domain(format!("training fraction {k} outside [0, 1]")));
    }
    let forget: HashSet<u64> = forget.ids.iter().copied().collect();
    let remaining: Vec<u64> = manifest
        .pools
        .train
        .iter()
        .copied()
        .filter(|id| !forget.contains(id))
        .collect();
    let n = overlap_count(k, remaining.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sorted(shuffled(remaining, &mut rng)[..n].to_vec()))
}

impl SplitManifest {
    fn refresh_counts(&mut self) {
        self.counts = BTreeMap::from([
            ("train".to_string(), self.pools.train.len()),
            ("test".to_string(), self.pools.test.len()),
            ("calibration".to_string(), self.pools.calibration.len()),
        ]);
        let test: HashSet<u64> = self.pools.test.iter().copied().collect();
        self.calibration_test_overlap = self
            .pools
            .calibration
            .iter()
            .filter(|id| test.contains(id))
            .count();
    }

    pub fn query(&self, name: &str) -> Result<&QuerySet> {
        self.query_sets
            .get(name)
            .ok_or_else(|| Error::Validation(format!("manifest has no query set `{name}`")))
    }

    /// Checks pool disjointness and every query-set invariant.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Compatibility(format!(
                "manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let train: BTreeSet<u64> = self.pools.train.iter().copied().collect();
        let test: BTreeSet<u64> = self.pools.test.iter().copied().collect();
        let cal: BTreeSet<u64> = self.pools.calibration.iter().copied().collect();
        if train.len() != self.pools.train.len()
            || test.len() != self.pools.test.len()
            || cal.len() != self.pools.calibration.len()
        {
            return Err(Error::Validation("duplicate ids inside a pool".into()));
        }
        if !train.is_disjoint(&test) {
            return Err(Error::Validation("train and test pools overlap".into()));
        }
        if !train.is_disjoint(&cal) {
            return Err(Error::Validation("train and calibration pools overlap".into()));
        }
        for (name, q) in &self.query_sets {
            if q.ids.len() != q.size {
                return Err(Error::Validation(format!("query `{name}` size mismatch")));
            }
            let inside = q.ids.iter().filter(|id| train.contains(id)).count();
            let ok = match q.kind {
                QueryKind::Overlapping | QueryKind::Forget => {
                    q.overlap_fraction == 1.0 && inside == q.size
                }
                QueryKind::Disjoint => q.overlap_fraction == 0.0 && inside == 0,
                QueryKind::Mixed => inside == overlap_count(q.overlap_fraction, q.size),
            };
            if !ok {
                return Err(Error::Validation(format!(
                    "query `{name}` ({}) has {inside} of {} ids in train, inconsistent with k={}",
                    q.kind, q.size, q.overlap_fraction
                )));
            }
        }
        Ok(())
    }

    /// Every referenced id must exist in `dataset`.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        let pools = [&self.pools.train, &self.pools.test, &self.pools.calibration];
        let queries = self.query_sets.values().map(|q| &q.ids);
        for ids in pools.into_iter().chain(queries) {
            if let Some(id) = ids.iter().find(|id| !dataset.contains(**id)) {
                return Err(Error::Validation(format!(
                    "manifest references id {id} absent from dataset {}",
                    dataset.name
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

pub fn persist_manifest(manifest: &SplitManifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<SplitManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MANIFEST_VERSION) => {}
        Some(v) => {
            return Err(Error::Compatibility(format!(
                "manifest version {v} (expected {MANIFEST_VERSION})"
            )))
        }
        None => return Err(Error::Parse("manifest has no version field".into())),
    }
    let manifest: SplitManifest =
        serde_json::from_value(value).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads a manifest and checks that every id exists in `dataset`.
pub fn load_manifest_for(path: &Path, dataset: &Dataset) -> Result<SplitManifest> {
    let manifest = load_manifest(path)?;
    manifest.validate_against(dataset)?;
    Ok(manifest)
}
