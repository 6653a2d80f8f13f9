//! Per-sample membership metrics, oriented so that larger means more member-like.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Correctness,
    Confidence,
    NegativeEntropy,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Correctness, Metric::Confidence, Metric::NegativeEntropy];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Correctness => "correctness",
            Metric::Confidence => "confidence",
            Metric::NegativeEntropy => "negative_entropy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub correctness: f64,
    pub confidence: f64,
    pub negative_entropy: f64,
}

impl MetricVector {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Correctness => self.correctness,
            Metric::Confidence => self.confidence,
            Metric::NegativeEntropy => self.negative_entropy,
        }
    }

    pub fn from_probs(probs: &[f64], label: usize) -> Result<Self> {
        Ok(Self {
            correctness: correctness(probs, label)?,
            confidence: confidence(probs, label)?,
            negative_entropy: negative_entropy(probs)?,
        })
    }
}

fn check(probs: &[f64], label: usize) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Domain("empty probability vector".into()));
    }
    if label >= probs.len() {
        return Err(Error::Domain(format!(
            "label {label} outside [0, {})",
            probs.len()
        )));
    }
    Ok(())
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// 1 when the predicted class equals `label`, else 0.
pub fn correctness(probs: &[f64], label: usize) -> Result<f64> {
    check(probs, label)?;
    Ok(if argmax(probs) == Some(label) { 1.0 } else { 0.0 })
}

/// Probability assigned to the true class.
pub fn confidence(probs: &[f64], label: usize) -> Result<f64> {
    check(probs, label)?;
    Ok(probs[label])
}

/// `Σ p·ln p` with `0·ln 0 = 0`.
pub fn negative_entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Domain("empty probability vector".into()));
    }
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum())
}

/// One metric vector per sample, in input order.
pub fn metric_matrix(model: &Model, samples: &[&Sample]) -> Result<Vec<MetricVector>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let probs = model.predict_samples(samples)?;
    samples
        .iter()
        .zip(probs.outer_iter())
        .map(|(s, row)| MetricVector::from_probs(row.as_slice().expect("contiguous row"), s.label))
        .collect()
}

/// CSV with columns `id,correctness,confidence,negative_entropy`.
pub fn write_metric_csv(path: &Path, samples: &[&Sample], metrics: &[MetricVector]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "id,correctness,confidence,negative_entropy").expect("vec write");
    for (s, m) in samples.iter().zip(metrics) {
        writeln!(
            out,
            "{},{},{},{}",
            s.id, m.correctness, m.confidence, m.negative_entropy
        )
        .expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
