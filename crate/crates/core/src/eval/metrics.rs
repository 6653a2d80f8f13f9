use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::model::Model;

/// Binary confusion counts, positive class = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / (self.tp + self.tn + self.fp + self.fn_) as f64
    }

    /// `2TP / (2TP + FP + FN)`, 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub accuracy: f64,
    pub f1: f64,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    pub binary: Option<BinaryCounts>,
    /// Classes absent from both labels and predictions; their F1 counts as 0.
    pub absent_classes: Vec<usize>,
}

/// Accuracy and F1 from label/prediction pairs. Two classes use the binary
/// F1 of class 1, more use the macro average of one-vs-rest F1.
pub fn score_predictions(
    labels: &[usize],
    predictions: &[usize],
    num_classes: usize,
) -> Result<(f64, f64, Vec<Vec<u64>>, Option<BinaryCounts>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::Precondition("evaluation set is empty".into()));
    }
    if labels.len() != predictions.len() {
        return Err(Error::Precondition(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= num_classes || p >= num_classes {
            return Err(Error::Domain(format!("class index outside 0..{num_classes}")));
        }
        confusion[y][p] += 1;
    }
    let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / labels.len() as f64;

    let one_vs_rest = |c: usize| {
        let tp = confusion[c][c];
        let fp: u64 = (0..num_classes).filter(|&r| r != c).map(|r| confusion[r][c]).sum();
        let fn_: u64 = (0..num_classes).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let tn = labels.len() as u64 - tp - fp - fn_;
        BinaryCounts { tp, tn, fp, fn_ }
    };
    let absent: Vec<usize> = (0..num_classes)
        .filter(|&c| {
            let b = one_vs_rest(c);
            b.tp + b.fp + b.fn_ == 0
        })
        .collect();
    if num_classes == 2 {
        let b = one_vs_rest(1);
        return Ok((accuracy, b.f1(), confusion, Some(b), absent));
    }
    let f1 = (0..num_classes).map(|c| one_vs_rest(c).f1()).sum::<f64>() / num_classes as f64;
    Ok((accuracy, f1, confusion, None, absent))
}

pub fn evaluate(model: &Model, samples: &[&Sample], dataset: &str) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Precondition("evaluation set is empty".into()));
    }
    let probs = model.predict_samples(samples)?;
    let predictions: Vec<usize> = probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("row-major")).expect("nonempty row"))
        .collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (accuracy, f1, confusion, binary, absent_classes) =
        score_predictions(&labels, &predictions, model.num_classes())?;
    if !absent_classes.is_empty() {
        log::warn!("classes {absent_classes:?} absent from labels and predictions; F1 taken as 0");
    }
    Ok(EvalReport {
        dataset: dataset.to_string(),
        model: model.weight_hash(),
        accuracy,
        f1,
        confusion,
        binary,
        absent_classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub repeats: usize,
}

/// Wall time of one forward pass over `samples`, after a warm-up pass.
pub fn benchmark_inference_time(model: &Model, samples: &[&Sample], repeats: usize) -> Result<Timing> {
    if repeats < 5 {
        return Err(Error::Precondition(format!("need at least 5 repeats, got {repeats}")));
    }
    if samples.is_empty() {
        return Err(Error::Precondition("benchmark batch is empty".into()));
    }
    let x = model.samples_batch(samples)?;
    std::hint::black_box(model.logits_packed(&x));
    let times: Vec<f64> = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(model.logits_packed(&x));
            start.elapsed().as_secs_f64()
        })
        .collect();
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
    Ok(Timing {
        mean_seconds: mean,
        std_seconds: var.sqrt(),
        repeats,
    })
}
