//! Dataset-level membership auditing.

mod pvalue;
mod threshold;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QueryKind, QuerySet, Sample};
use crate::error::{Error, Result};
use crate::metrics::metric_matrix;
use crate::model::{Model, ModelSpec};
use crate::train::{train_supervised, TrainConfig};

pub use pvalue::{dataset_pvalue, welch_t_test, WelchTest, MIN_P_VALUE};
pub use threshold::{
    infer_threshold, infer_thresholds, per_sample_membership, Candidate, MetricThreshold,
    ThresholdSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    /// Membership not rejected.
    Used,
    /// `p < alpha`: the query set was not used for training.
    NotUsed,
    /// Too few samples to test.
    Inconclusive,
}

impl Decision {
    pub fn from_p(p: f64, alpha: f64, n: usize) -> Self {
        if n < 2 {
            Decision::Inconclusive
        } else if p < alpha {
            Decision::NotUsed
        } else {
            Decision::Used
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Used => "used",
            Decision::NotUsed => "not-used",
            Decision::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub query: String,
    pub kind: QueryKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub k: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub decision: Decision,
    pub mean_membership: f64,
    pub thresholds: Vec<(String, f64)>,
    pub cal_seed: Option<u64>,
    #[serde(skip)]
    pub bits: Vec<u8>,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Membership bit per sample under the OR rule.
pub fn membership_bits(
    model: &Model,
    samples: &[&Sample],
    thresholds: &ThresholdSet,
) -> Result<Vec<u8>> {
    Ok(metric_matrix(model, samples)?
        .iter()
        .map(|m| u8::from(per_sample_membership(m, thresholds)))
        .collect())
}

/// Audits already-resolved query samples.
pub fn audit_samples(
    model: &Model,
    query: &QuerySet,
    samples: &[&Sample],
    thresholds: &ThresholdSet,
    alpha: f64,
) -> Result<AuditReport> {
    if samples.is_empty() {
        return Err(Error::Domain(format!("query {} is empty", query.name)));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let bits = membership_bits(model, samples, thresholds)?;
    let p_value = dataset_pvalue(&bits)?;
    let ones = bits.iter().filter(|&&b| b == 1).count();
    Ok(AuditReport {
        query: query.name.clone(),
        kind: query.kind,
        n: bits.len(),
        k: query.overlap_fraction,
        p_value,
        alpha,
        decision: Decision::from_p(p_value, alpha, bits.len()),
        mean_membership: ones as f64 / bits.len() as f64,
        thresholds: thresholds
            .thresholds
            .iter()
            .map(|t| (t.metric.name().to_string(), t.threshold))
            .collect(),
        cal_seed: thresholds.calibration_seed,
        bits,
    })
}

/// Audits `query` against `model`, resolving its ids in `dataset`.
pub fn audit_query(
    model: &Model,
    dataset: &Dataset,
    query: &QuerySet,
    thresholds: &ThresholdSet,
    alpha: f64,
) -> Result<AuditReport> {
    let samples = dataset.select(&query.ids)?;
    audit_samples(model, query, &samples, thresholds, alpha)
}

/// A trained calibration model with its split and fitted thresholds.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: Model,
    pub train_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
    pub seed: u64,
}

impl Calibration {
    /// Fits thresholds with the calibration model's own members and
    /// non-members.
    pub fn thresholds(&self, dataset: &Dataset) -> Result<ThresholdSet> {
        let members = metric_matrix(&self.model, &dataset.select(&self.train_ids)?)?;
        let nonmembers = metric_matrix(&self.model, &dataset.select(&self.test_ids)?)?;
        let mut set = infer_thresholds(&members, &nonmembers)?;
        set.calibration_seed = Some(self.seed);
        set.calibration_model = Some(self.model.weight_hash());
        Ok(set)
    }
}

/// Splits calibration ids in half by `seed`; the extra id of an odd split
/// goes to the training half. Both halves come back sorted.
pub fn split_calibration(ids: &[u64], seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ids.len().div_ceil(2);
    let mut test_ids = ids.split_off(cut);
    ids.sort_unstable();
    test_ids.sort_unstable();
    (ids, test_ids)
}

/// Trains a fresh `spec` model on the training half of `cal`.
pub fn train_calibration_model(
    cal: &[&Sample],
    spec: &ModelSpec,
    seed: u64,
    config: &TrainConfig,
) -> Result<Calibration> {
    if cal.len() < 2 {
        return Err(Error::Capacity(format!(
            "calibration set needs at least 2 samples, got {}",
            cal.len()
        )));
    }
    spec.validate()?;
    let ids: Vec<u64> = cal.iter().map(|s| s.id).collect();
    let (train_ids, test_ids) = split_calibration(&ids, seed);
    let train: Vec<&Sample> = cal
        .iter()
        .copied()
        .filter(|s| train_ids.binary_search(&s.id).is_ok())
        .collect();
    let mut model = Model::build(spec.clone(), seed)?;
    train_supervised(&mut model, &train, &TrainConfig { seed, ..config.clone() })?;
    Ok(Calibration {
        model,
        train_ids,
        test_ids,
        seed,
    })
}
