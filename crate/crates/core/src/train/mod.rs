//! Supervised training, distillation and audit-guided purification.

mod config;
mod loss;
mod optim;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{audit_samples, AuditReport, ThresholdSet};
use crate::data::{QuerySet, Sample};
use crate::error::{Error, Result};
use crate::model::Model;

pub use config::TrainConfig;
pub use loss::{
    audit_surrogate_grad, audit_surrogate_loss, classification_loss, classification_loss_grad,
    kd_loss, kd_loss_grad,
};
use optim::Adam;

/// Per-epoch loss record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub loss_classification: f64,
    pub loss_kd: f64,
    pub loss_audit: f64,
    /// `λ_cls·classification + λ_kd·kd + λ_audit·audit`.
    pub loss_afs: f64,
    /// Audit p-value of the forget set against the model after this epoch.
    pub p_forget: Option<f64>,
    pub train_accuracy: f64,
}

pub fn write_history_csv(path: &Path, history: &[LossBreakdown]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,loss_cls,loss_kd,loss_audit,loss_afs,p_forget,train_acc").expect("vec write");
    for h in history {
        let p = h.p_forget.map(|p| format!("{p:e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            h.epoch, h.loss_classification, h.loss_kd, h.loss_audit, h.loss_afs, p, h.train_accuracy
        )
        .expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn check_finite(epoch: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            message: format!("{what} loss became {v}"),
        })
    }
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

/// Mini-batch Adam on cross-entropy. Deterministic given `config.seed`.
pub fn train_supervised(
    model: &mut Model,
    samples: &[&Sample],
    config: &TrainConfig,
) -> Result<Vec<LossBreakdown>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    let x = model.samples_batch(samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut steps) = (0.0, 0.0, 0usize);
        for idx in batches(&order, config.batch_size) {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            model.zero_grad();
            let (logits, caches) = model.forward_train(&xb);
            let (loss, grad) = classification_loss_grad(&logits, &yb)?;
            check_finite(epoch, "classification", loss)?;
            model.backward(caches, &grad);
            adam.step(model.params_mut());
            loss_sum += loss;
            correct += loss::batch_accuracy(&logits, &yb) * yb.len() as f64;
            steps += 1;
        }
        let cls = loss_sum / steps as f64;
        history.push(LossBreakdown {
            epoch,
            loss_classification: cls,
            loss_kd: 0.0,
            loss_audit: 0.0,
            loss_afs: cls,
            p_forget: None,
            train_accuracy: correct / samples.len() as f64,
        });
        log::debug!("supervised epoch {epoch}: loss {cls:.5}");
    }
    Ok(history)
}

/// Samples to forget, resolved from a query set.
#[derive(Debug, Clone)]
pub struct ForgetSet<'a> {
    pub query: &'a QuerySet,
    pub samples: Vec<&'a Sample>,
}

#[derive(Debug, Clone)]
pub struct AfsOutcome {
    pub history: Vec<LossBreakdown>,
    pub final_audit: AuditReport,
}

/// Distils `teacher` into `student` on `partial_train`, optionally adding the
/// audit surrogate loss on the forget set.
///
/// With `audit_guided = false` this is plain distillation (the ablation).
/// The teacher is only read. After every epoch the forget set is audited
/// against the student with `thresholds` and the p-value is logged.
pub fn run_afs(
    teacher: &Model,
    student: &mut Model,
    partial_train: &[&Sample],
    forget: &ForgetSet<'_>,
    thresholds: &ThresholdSet,
    config: &TrainConfig,
    audit_guided: bool,
) -> Result<AfsOutcome> {
    run_afs_observed(
        teacher,
        student,
        partial_train,
        forget,
        thresholds,
        config,
        audit_guided,
        &mut |_, _| {},
    )
}

/// [`run_afs`] with a callback invoked after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn run_afs_observed(
    teacher: &Model,
    student: &mut Model,
    partial_train: &[&Sample],
    forget: &ForgetSet<'_>,
    thresholds: &ThresholdSet,
    config: &TrainConfig,
    audit_guided: bool,
    on_epoch: &mut dyn FnMut(&LossBreakdown, &Model),
) -> Result<AfsOutcome> {
    config.validate()?;
    if teacher.num_classes() != student.num_classes() {
        return Err(Error::Construction(format!(
            "teacher has {} classes, student {}",
            teacher.num_classes(),
            student.num_classes()
        )));
    }
    if partial_train.is_empty() {
        return Err(Error::Precondition("partial training set is empty".into()));
    }
    let forget_ids: HashSet<u64> = forget.samples.iter().map(|s| s.id).collect();
    if let Some(s) = partial_train.iter().find(|s| forget_ids.contains(&s.id)) {
        return Err(Error::Precondition(format!(
            "sample {} is in both the partial training set and the forget set",
            s.id
        )));
    }

    let x = student.samples_batch(partial_train)?;
    let labels: Vec<usize> = partial_train.iter().map(|s| s.label).collect();
    // the teacher is frozen and inputs are not augmented, so its logits are fixed
    let teacher_logits = teacher.logits_packed(&teacher.samples_batch(partial_train)?);
    let forget_x = student.samples_batch(&forget.samples)?;
    let forget_labels: Vec<usize> = forget.samples.iter().map(|s| s.label).collect();
    let guided = audit_guided && !forget.samples.is_empty();
    if audit_guided && forget.samples.is_empty() {
        log::warn!("forget set is empty; audit-guided run degrades to plain distillation");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut forget_rng = ChaCha8Rng::seed_from_u64(config.seed);
    forget_rng.set_stream(1);
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..partial_train.len()).collect();
    let mut forget_order: Vec<usize> = (0..forget.samples.len()).collect();
    let steps_per_epoch = partial_train.len().div_ceil(config.batch_size);
    let forget_batch = forget.samples.len().div_ceil(steps_per_epoch).max(1);

    let mut history = Vec::with_capacity(config.epochs);
    let mut below_alpha = 0;
    let mut final_audit = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        if guided {
            forget_order.shuffle(&mut forget_rng);
        }
        let mut forget_chunks = forget_order.chunks(forget_batch);
        let (mut cls_sum, mut kd_sum, mut audit_sum, mut correct) = (0.0, 0.0, 0.0, 0.0);
        let mut audit_steps = 0usize;
        for idx in batches(&order, config.batch_size) {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let tb = teacher_logits.select(Axis(0), idx);
            student.zero_grad();
            let (logits, caches) = student.forward_train(&xb);
            let (cls, g_cls) = classification_loss_grad(&logits, &yb)?;
            let (kd, g_kd) = kd_loss_grad(&tb, &logits, config.temperature)?;
            check_finite(epoch, "classification", cls)?;
            check_finite(epoch, "distillation", kd)?;
            let grad: Array2<f64> = g_cls * config.lambda_cls + g_kd * config.lambda_kd;
            student.backward(caches, &grad);

            if guided {
                if let Some(fidx) = forget_chunks.next() {
                    let fx = forget_x.select(Axis(0), fidx);
                    let fy: Vec<usize> = fidx.iter().map(|&i| forget_labels[i]).collect();
                    let audit = if config.lambda_audit > 0.0 {
                        let (flogits, fcaches) = student.forward_train(&fx);
                        let (audit, g_audit) = audit_surrogate_grad(&flogits, &fy)?;
                        student.backward(fcaches, &(g_audit * config.lambda_audit));
                        audit
                    } else {
                        // zero weight: observe without touching training state
                        audit_surrogate_grad(&student.logits_packed(&fx), &fy)?.0
                    };
                    check_finite(epoch, "audit", audit)?;
                    audit_sum += audit;
                    audit_steps += 1;
                }
            }
            adam.step(student.params_mut());
            cls_sum += cls;
            kd_sum += kd;
            correct += loss::batch_accuracy(&logits, &yb) * yb.len() as f64;
        }
        let cls = cls_sum / steps_per_epoch as f64;
        let kd = kd_sum / steps_per_epoch as f64;
        let audit = if audit_steps > 0 {
            audit_sum / audit_steps as f64
        } else {
            0.0
        };
        let report = audit_samples(student, forget.query, &forget.samples, thresholds, config.alpha)?;
        let p = report.p_value;
        history.push(LossBreakdown {
            epoch,
            loss_classification: cls,
            loss_kd: kd,
            loss_audit: audit,
            loss_afs: config.lambda_cls * cls + config.lambda_kd * kd + config.lambda_audit * audit,
            p_forget: Some(p),
            train_accuracy: correct / partial_train.len() as f64,
        });
        log::debug!("afs epoch {epoch}: cls {cls:.4} kd {kd:.4} audit {audit:.4} p {p:e}");
        on_epoch(history.last().expect("just pushed"), student);
        final_audit = Some(report);
        below_alpha = if p < config.alpha { below_alpha + 1 } else { 0 };
        if config.early_stop && below_alpha >= 3 {
            log::info!("forget set rejected for 3 consecutive epochs; stopping at epoch {epoch}");
            break;
        }
    }
    Ok(AfsOutcome {
        history,
        final_audit: final_audit.expect("at least one epoch"),
    })
}
