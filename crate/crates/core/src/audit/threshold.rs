//! Per-metric threshold calibration maximising balanced accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub value: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricThreshold {
    pub metric: Metric,
    pub threshold: f64,
    pub balanced_accuracy: f64,
    /// Every candidate in ascending order with its rates.
    pub trace: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub thresholds: Vec<MetricThreshold>,
    /// Seed of the calibration split/model the thresholds came from, if any.
    pub calibration_seed: Option<u64>,
    /// Weight hash of the calibration model, if any.
    pub calibration_model: Option<String>,
}

impl ThresholdSet {
    pub fn threshold(&self, metric: Metric) -> f64 {
        self.thresholds
            .iter()
            .find(|t| t.metric == metric)
            .map(|t| t.threshold)
            .expect("threshold set covers every metric")
    }

    /// Checks that each threshold is on its grid and its recorded score
    /// matches the trace.
    pub fn is_consistent(&self) -> bool {
        self.thresholds.iter().all(|t| {
            t.trace.iter().any(|c| {
                c.value == t.threshold
                    && c.balanced_accuracy == t.balanced_accuracy
                    && c.balanced_accuracy == (c.tpr + c.tnr) / 2.0
            })
        })
    }
}

fn sorted_finite(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Domain(format!("{what} metric list is empty")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain(format!("{what} metric list contains NaN")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Chooses the largest observed value `t` maximising `(TPR(t) + TNR(t)) / 2`,
/// where `TPR(t)` is the fraction of members with value `≥ t` and `TNR(t)`
/// the fraction of non-members with value `< t`.
///
/// Candidates are compared exactly on integer counts, so mathematically
/// tied candidates are never separated by rounding.
pub fn infer_threshold(
    metric: Metric,
    members: &[f64],
    nonmembers: &[f64],
) -> Result<MetricThreshold> {
    let m = sorted_finite(members, "member")?;
    let n = sorted_finite(nonmembers, "non-member")?;
    let (nm, nn) = (m.len() as u128, n.len() as u128);

    let mut grid: Vec<f64> = m.iter().chain(&n).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<(u128, usize)> = None;
    for (i, &t) in grid.iter().enumerate() {
        let member_hits = m.len() - m.partition_point(|&v| v < t);
        let nonmember_hits = n.partition_point(|&v| v < t);
        // proportional to the balanced accuracy: hits_m/nm + hits_n/nn
        let score = member_hits as u128 * nn + nonmember_hits as u128 * nm;
        if best.is_none_or(|(b, _)| score >= b) {
            best = Some((score, i));
        }
        let tpr = member_hits as f64 / m.len() as f64;
        let tnr = nonmember_hits as f64 / n.len() as f64;
        trace.push(Candidate {
            value: t,
            tpr,
            tnr,
            balanced_accuracy: (tpr + tnr) / 2.0,
        });
    }
    let (_, idx) = best.expect("grid is nonempty");
    Ok(MetricThreshold {
        metric,
        threshold: trace[idx].value,
        balanced_accuracy: trace[idx].balanced_accuracy,
        trace,
    })
}

/// Thresholds for all three metrics from calibration members/non-members.
pub fn infer_thresholds(members: &[MetricVector], nonmembers: &[MetricVector]) -> Result<ThresholdSet> {
    let thresholds = Metric::ALL
        .iter()
        .map(|&metric| {
            let mv: Vec<f64> = members.iter().map(|v| v.get(metric)).collect();
            let nv: Vec<f64> = nonmembers.iter().map(|v| v.get(metric)).collect();
            infer_threshold(metric, &mv, &nv)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdSet {
        thresholds,
        calibration_seed: None,
        calibration_model: None,
    })
}

/// OR rule: a sample is a member if any metric reaches its threshold.
pub fn per_sample_membership(metrics: &MetricVector, thresholds: &ThresholdSet) -> bool {
    Metric::ALL
        .iter()
        .any(|&m| metrics.get(m) >= thresholds.threshold(m))
}
