//! Loss terms and their gradients with respect to logits.
//!
//! All losses are batch means. The `*_grad` variants take logits and return
//! `(loss, dloss/dlogits)`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::softmax_rows;

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_labels(rows: usize, cols: usize, labels: &[usize]) -> Result<()> {
    if rows != labels.len() {
        return Err(Error::Domain(format!(
            "{rows} prediction rows but {} labels",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= cols) {
        return Err(Error::Domain(format!("label {l} outside [0, {cols})")));
    }
    Ok(())
}

/// Mean cross-entropy `-mean(ln p[label])`.
pub fn classification_loss(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(probs.nrows(), probs.ncols(), labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .outer_iter()
        .zip(labels)
        .map(|(row, &y)| -row[y].ln())
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn classification_loss_grad(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(logits.nrows(), logits.ncols(), labels)?;
    let b = labels.len().max(1) as f64;
    let log_p = log_softmax_rows(logits);
    let loss = -labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_p[[i, y]])
        .sum::<f64>()
        / b;
    let mut grad = log_p.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        grad[[i, y]] -= 1.0;
    }
    grad /= b;
    Ok((loss, grad))
}

fn check_kd(teacher: &Array2<f64>, student: &Array2<f64>, temperature: f64) -> Result<()> {
    if teacher.dim() != student.dim() {
        return Err(Error::Domain(format!(
            "teacher logits {:?} and student logits {:?} differ in shape",
            teacher.dim(),
            student.dim()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature {temperature} must be positive")));
    }
    Ok(())
}

/// `τ²·KL(softmax(teacher/τ) ‖ softmax(student/τ))`, batch mean.
pub fn kd_loss(teacher_logits: &Array2<f64>, student_logits: &Array2<f64>, temperature: f64) -> Result<f64> {
    Ok(kd_loss_grad(teacher_logits, student_logits, temperature)?.0)
}

/// Gradient is taken with respect to the student logits.
pub fn kd_loss_grad(
    teacher_logits: &Array2<f64>,
    student_logits: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    check_kd(teacher_logits, student_logits, temperature)?;
    let b = teacher_logits.nrows().max(1) as f64;
    let log_t = log_softmax_rows(&(teacher_logits / temperature));
    let log_s = log_softmax_rows(&(student_logits / temperature));
    let p_t = log_t.mapv(f64::exp);
    let p_s = log_s.mapv(f64::exp);
    let mut kl = 0.0;
    for ((pt, lt), ls) in p_t.iter().zip(&log_t).zip(&log_s) {
        if *pt > 0.0 {
            kl += pt * (lt - ls);
        }
    }
    let tau2 = temperature * temperature;
    // KL is nonnegative; clamp rounding noise at coincident distributions
    let loss = (tau2 * kl / b).max(0.0);
    let grad = (p_s - p_t) * (temperature / b);
    Ok((loss, grad))
}

fn surrogate_row(probs: &[f64], label: usize, log_c: f64) -> f64 {
    let neg_entropy: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum();
    probs[label] + 1.0 + neg_entropy / log_c
}

/// Mean over forget samples of `confidence + sharpness`, where
/// `sharpness = 1 + negative_entropy / ln C` lies in `[0, 1]`.
///
/// The value lies in `[0, 2]`. An empty batch yields 0.
pub fn audit_surrogate_loss(probs: ArrayView2<f64>, labels: &[usize], num_classes: usize) -> Result<f64> {
    check_labels(probs.nrows(), probs.ncols(), labels)?;
    if num_classes < 2 || probs.ncols() != num_classes {
        return Err(Error::Domain(format!(
            "surrogate needs at least two classes matching the probability width, got {num_classes}"
        )));
    }
    if labels.is_empty() {
        log::warn!("audit surrogate called on an empty forget batch; contributing 0");
        return Ok(0.0);
    }
    let log_c = (num_classes as f64).ln();
    let total: f64 = probs
        .outer_iter()
        .zip(labels)
        .map(|(row, &y)| surrogate_row(row.as_slice().expect("contiguous"), y, log_c))
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn audit_surrogate_grad(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let c = logits.ncols();
    let probs = softmax_rows(logits);
    let loss = audit_surrogate_loss(probs.view(), labels, c)?;
    let b = labels.len().max(1) as f64;
    let log_c = (c as f64).ln();
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((p, mut g), &y) in probs.outer_iter().zip(grad.outer_iter_mut()).zip(labels) {
        let s: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
        for j in 0..c {
            let conf = p[y] * (f64::from(u8::from(j == y)) - p[j]);
            let sharp = if p[j] > 0.0 { p[j] * (p[j].ln() - s) } else { 0.0 };
            g[j] = (conf + sharp / log_c) / b;
        }
    }
    Ok((loss, grad))
}

/// Fraction of rows whose argmax equals the label.
pub(crate) fn batch_accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| crate::metrics::argmax(row.as_slice().expect("contiguous")) == Some(y))
        .count();
    correct as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_examples() {
        let one_hot = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(classification_loss(one_hot.view(), &[1, 0]).unwrap(), 0.0);
        let uniform = Array2::from_elem((3, 10), 0.1);
        let l = classification_loss(uniform.view(), &[0, 4, 9]).unwrap();
        assert!((l - 10.0_f64.ln()).abs() < 1e-9);
        let p = array![[0.6652, 0.2447, 0.0900]];
        let l = classification_loss(p.view(), &[0]).unwrap();
        assert!((l - 0.4076).abs() < 1e-4);
        assert!((l + 0.6652_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kd_examples() {
        let z = array![[1.0, -2.0, 0.5], [0.0, 0.0, 3.0]];
        assert!(kd_loss(&z, &z, 4.0).unwrap().abs() < 1e-12);
        let t = array![[2.0, 0.0]];
        let s = array![[0.0, 2.0]];
        // KL([σ(2), σ(-2)] ‖ [σ(-2), σ(2)]) = (σ(2) - σ(-2))·2
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expected = sig(2.0) * (sig(2.0) / sig(-2.0)).ln() + sig(-2.0) * (sig(-2.0) / sig(2.0)).ln();
        let got = kd_loss(&t, &s, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-12);
        // ln(σ(2)/σ(-2)) = 2, so the KL is 2·(σ(2) - σ(-2))
        assert!((got - 1.5232).abs() < 5e-5);
        assert!(matches!(kd_loss(&t, &s, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn surrogate_boundaries() {
        let uniform = Array2::from_elem((1, 10), 0.1);
        let v = audit_surrogate_loss(uniform.view(), &[3], 10).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        let right = array![[0.0, 1.0, 0.0]];
        assert_eq!(audit_surrogate_loss(right.view(), &[1], 3).unwrap(), 2.0);
        assert_eq!(audit_surrogate_loss(right.view(), &[0], 3).unwrap(), 1.0);
        let empty = Array2::<f64>::zeros((0, 3));
        assert_eq!(audit_surrogate_loss(empty.view(), &[], 3).unwrap(), 0.0);
    }
}
