//! Acceptance suite: runs every criterion and prints one PASS/FAIL line each.

mod oracles;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unlearn_core::audit::{
    dataset_pvalue, infer_threshold, infer_thresholds, per_sample_membership, train_calibration_model, Decision,
    ThresholdSet,
};
use unlearn_core::data::{
    build_query_set, generate_synthetic, partial_train_ids, sample_splits, Dataset, PoolSizes, QueryKind,
    Sample, SyntheticConfig,
};
use unlearn_core::eval::{
    benchmark_inference_time, emit_report, median, run_experiment_suite, score_predictions, store_hash,
    ResultRow, SuiteConfig, SuiteOutcome, RESULTS_FILE,
};
use unlearn_core::metrics::{confidence, correctness, metric_matrix, negative_entropy, Metric, MetricVector};
use unlearn_core::model::{softmax, softmax_rows, InputShape, Model, ModelSpec};
use unlearn_core::train::{
    audit_surrogate_grad, audit_surrogate_loss, classification_loss, classification_loss_grad, kd_loss,
    kd_loss_grad, run_afs_observed, ForgetSet, TrainConfig,
};

use oracles::{numeric_gradient, relative_error, threshold_oracle, welch_oracle};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Collects named checks; a criterion passes when every check does.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    count: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, name: &str) {
        self.count += 1;
        if !ok {
            self.failures.push(name.to_string());
        }
    }

    fn close(&mut self, got: f64, want: f64, tol: f64, name: &str) {
        let ok = (got - want).abs() <= tol;
        self.check(ok, &format!("{name}: got {got}, want {want} ± {tol}"));
    }

    fn verdict(self) -> Verdict {
        if self.failures.is_empty() {
            verdict(true, format!("{} checks", self.count))
        } else {
            verdict(false, self.failures.join("; "))
        }
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---- criterion 1 -----------------------------------------------------------

fn random_metric_values(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(1..=40);
    let discrete = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            if discrete {
                rng.gen_range(0..8) as f64 / 8.0
            } else {
                rng.gen_range(-3.0..1.0)
            }
        })
        .collect()
}

fn threshold_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let members = random_metric_values(&mut rng);
        let nonmembers = random_metric_values(&mut rng);
        let got = infer_threshold(Metric::Confidence, &members, &nonmembers).unwrap();
        let (t, ba) = threshold_oracle(&members, &nonmembers);
        if got.threshold != t || got.balanced_accuracy != ba {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && elapsed < 60.0,
        format!("{mismatches}/1000 mismatches in {elapsed:.2}s"),
    )
}

// ---- criterion 2 -----------------------------------------------------------

fn pvalue_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut degenerate_failures = 0;
    let mut tested = 0;
    let mut cases: Vec<Vec<u8>> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(2..=2000);
            let rate: f64 = rng.gen_range(0.0..1.0);
            (0..n).map(|_| u8::from(rng.gen_bool(rate))).collect()
        })
        .collect();
    cases[0] = (0..100).map(|i| u8::from(i % 2 == 0)).collect();
    for bits in &cases {
        let p = dataset_pvalue(bits).unwrap();
        let ones = bits.iter().filter(|&&b| b == 1).count();
        if ones == bits.len() {
            degenerate_failures += usize::from(p != 1.0);
        } else if ones == 0 {
            degenerate_failures += usize::from(!(p > 0.0 && p < 1e-300));
        } else {
            tested += 1;
            worst = worst.max((p - welch_oracle(bits)).abs());
        }
    }
    let rules = [
        dataset_pvalue(&[1; 500]).unwrap() == 1.0,
        dataset_pvalue(&[1, 1]).unwrap() == 1.0,
        dataset_pvalue(&[0]).unwrap() == 1.0,
        dataset_pvalue(&[1]).unwrap() == 1.0,
    ];
    let rules_ok = rules.iter().all(|&r| r);
    verdict(
        worst <= 1e-9 && degenerate_failures == 0 && rules_ok,
        format!(
            "{tested} mixed vectors, max |Δp| = {worst:.2e}; degenerate rules {}",
            if rules_ok && degenerate_failures == 0 { "hold" } else { "violated" }
        ),
    )
}

// ---- criterion 3 -----------------------------------------------------------

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

fn gradient_checks(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for trial in 0..20 {
        let (b, k) = (rng.gen_range(1..5), rng.gen_range(2..7));
        let logits = random_matrix(&mut rng, b, k, 3.0);
        let teacher = random_matrix(&mut rng, b, k, 3.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        let x: Vec<f64> = logits.iter().copied().collect();
        let as_matrix = |v: &[f64]| Array2::from_shape_vec((b, k), v.to_vec()).unwrap();

        let (_, g) = classification_loss_grad(&logits, &labels).unwrap();
        let f = |v: &[f64]| classification_loss(softmax_rows(&as_matrix(v)).view(), &labels).unwrap();
        let err = relative_error(g.as_slice().unwrap(), &numeric_gradient(&f, &x, h));
        c.check(err < 1e-4, &format!("cross-entropy gradient trial {trial}: rel err {err:.2e}"));

        for tau in [1.0, 4.0] {
            let (_, g) = kd_loss_grad(&teacher, &logits, tau).unwrap();
            let f = |v: &[f64]| kd_loss(&teacher, &as_matrix(v), tau).unwrap();
            let err = relative_error(g.as_slice().unwrap(), &numeric_gradient(&f, &x, h));
            c.check(err < 1e-4, &format!("kd gradient τ={tau} trial {trial}: rel err {err:.2e}"));
        }

        let (_, g) = audit_surrogate_grad(&logits, &labels).unwrap();
        let f = |v: &[f64]| audit_surrogate_loss(softmax_rows(&as_matrix(v)).view(), &labels, k).unwrap();
        let err = relative_error(g.as_slice().unwrap(), &numeric_gradient(&f, &x, h));
        c.check(err < 1e-4, &format!("surrogate gradient trial {trial}: rel err {err:.2e}"));
    }
}

fn tiny_model_and_samples() -> (Model, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::build(ModelSpec::mlp_student(InputShape::Flat { features: 6 }, 3), 9).unwrap();
    let samples = (0..40)
        .map(|id| Sample {
            id,
            features: (0..6).map(|_| rng.gen_range(0.0..1.0)).collect(),
            label: rng.gen_range(0..3),
        })
        .collect();
    (model, samples)
}

fn formula_suite() -> Verdict {
    let mut c = Checks::default();
    let tol = 1e-9;
    let reference = softmax(&[2.0, 1.0, 0.0]);
    let z = 2f64.exp() + 1f64.exp() + 1.0;

    // probabilities
    for (got, want) in reference.iter().zip([2f64.exp() / z, 1f64.exp() / z, 1.0 / z]) {
        c.close(*got, want, tol, "softmax [2,1,0]");
    }
    for (got, want) in reference.iter().zip([0.6652, 0.2447, 0.0900]) {
        c.close(*got, want, 5e-5, "softmax [2,1,0] rounded");
    }
    for p in softmax(&[0.3; 10]) {
        c.close(p, 0.1, tol, "equal logits");
    }
    for (a, b) in softmax(&[2.0, 1.0, 0.0]).iter().zip(softmax(&[102.0, 101.0, 100.0])) {
        c.close(*a, b, tol, "shift invariance");
    }

    // membership metrics
    let p3 = [0.7, 0.2, 0.1];
    c.close(correctness(&p3, 0).unwrap(), 1.0, 0.0, "correctness match");
    c.close(correctness(&p3, 2).unwrap(), 0.0, 0.0, "correctness mismatch");
    c.close(correctness(&[0.5, 0.5], 0).unwrap(), 1.0, 0.0, "correctness tie → lowest index");
    c.close(correctness(&[0.5, 0.5], 1).unwrap(), 0.0, 0.0, "correctness tie, other label");
    c.close(confidence(&[0.0, 1.0, 0.0], 1).unwrap(), 1.0, tol, "confidence one-hot");
    c.close(confidence(&[0.1; 10], 7).unwrap(), 0.1, tol, "confidence uniform");
    c.close(confidence(&reference, 1).unwrap(), reference[1], tol, "confidence reference");
    c.close(negative_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0, tol, "entropy one-hot");
    c.close(negative_entropy(&[0.1; 10]).unwrap(), -(10f64.ln()), tol, "entropy uniform");
    c.close(negative_entropy(&[0.5, 0.5]).unwrap(), -(2f64.ln()), tol, "entropy halves");
    c.close(negative_entropy(&[0.1; 10]).unwrap(), -2.302585, 1e-6, "entropy uniform rounded");

    let (model, samples) = tiny_model_and_samples();
    c.check(metric_matrix(&model, &[]).unwrap().is_empty(), "empty metric matrix");
    let dup = vec![&samples[0]; 5];
    let rows = metric_matrix(&model, &dup).unwrap();
    c.check(rows.windows(2).all(|w| w[0] == w[1]), "duplicated sample rows identical");
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = metric_matrix(&model, &refs).unwrap();
    for (s, row) in samples.iter().zip(&batch) {
        let single = metric_matrix(&model, &[s]).unwrap()[0];
        for m in Metric::ALL {
            c.close(row.get(m), single.get(m), tol, "batch vs loop metrics");
        }
    }

    // losses
    let one_hot = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    c.close(classification_loss(one_hot.view(), &[1, 0]).unwrap(), 0.0, tol, "cross-entropy one-hot");
    let uniform = Array2::from_elem((2, 10), 0.1);
    c.close(classification_loss(uniform.view(), &[3, 8]).unwrap(), 10f64.ln(), tol, "cross-entropy uniform");
    let ref_probs = array![[0.6652, 0.2447, 0.0900]];
    let ce = classification_loss(ref_probs.view(), &[0]).unwrap();
    c.close(ce, -(0.6652f64.ln()), tol, "cross-entropy reference");
    c.close(ce, 0.4076, 1e-4, "cross-entropy reference rounded");

    let z2 = array![[1.5, -0.5, 0.25]];
    c.close(kd_loss(&z2, &z2, 4.0).unwrap(), 0.0, tol, "kd identical logits");
    let (pt, ps) = (softmax(&[2.0, 0.0]), softmax(&[0.0, 2.0]));
    let kl: f64 = pt.iter().zip(&ps).map(|(a, b)| a * (a / b).ln()).sum();
    let kd = kd_loss(&array![[2.0, 0.0]], &array![[0.0, 2.0]], 1.0).unwrap();
    c.close(kd, kl, tol, "kd [2,0] vs [0,2]");
    c.close(kd, 1.5232, 1e-4, "kd [2,0] vs [0,2] rounded");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (a, b) = (random_matrix(&mut rng, 3, 4, 5.0), random_matrix(&mut rng, 3, 4, 5.0));
        c.check(kd_loss(&a, &b, rng.gen_range(0.5..5.0)).unwrap() >= 0.0, "kd nonnegative");
    }
    let uniform3 = Array2::from_elem((1, 10), 0.1);
    c.close(audit_surrogate_loss(uniform3.view(), &[4], 10).unwrap(), 0.1, tol, "surrogate uniform");
    let hot = array![[0.0, 0.0, 1.0]];
    c.close(audit_surrogate_loss(hot.view(), &[2], 3).unwrap(), 2.0, tol, "surrogate one-hot true");
    c.close(audit_surrogate_loss(hot.view(), &[0], 3).unwrap(), 1.0, tol, "surrogate one-hot wrong");

    // thresholds, OR rule, decision
    let th = infer_threshold(Metric::Confidence, &[0.9, 0.8, 0.7], &[0.4, 0.3, 0.2]).unwrap();
    c.check((th.threshold, th.balanced_accuracy) == (0.7, 1.0), "separated threshold");
    let th = infer_threshold(Metric::Confidence, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
    c.check((th.threshold, th.balanced_accuracy) == (0.5, 0.5), "indistinguishable threshold");
    let th = infer_threshold(Metric::Confidence, &[0.9, 0.5], &[0.6, 0.2]).unwrap();
    c.check((th.threshold, th.balanced_accuracy) == (0.9, 0.75), "tied maximisers");
    let set = fixed_thresholds(1.0, 0.5, -1.0);
    let mv = |a, b, e| MetricVector {
        correctness: a,
        confidence: b,
        negative_entropy: e,
    };
    c.check(per_sample_membership(&mv(1.0, 0.3, -1.5), &set), "OR rule correctness fires");
    c.check(!per_sample_membership(&mv(0.0, 0.3, -1.5), &set), "OR rule all below");
    c.check(per_sample_membership(&mv(0.0, 0.5, -1.5), &set), "OR rule inclusive");
    c.check(Decision::from_p(0.2, 0.05, 100) == Decision::Used, "decision used");

    // Eq. 1-2
    let (acc, f1, ..) = score_predictions(&[1, 1, 0, 0], &[1, 1, 0, 1], 2).unwrap();
    c.close(acc, 0.75, tol, "binary accuracy");
    c.close(f1, 0.8, tol, "binary F1");
    let (acc, f1, ..) = score_predictions(&[0, 1, 2, 2], &[0, 2, 2, 2], 3).unwrap();
    c.close(acc, 0.75, tol, "3-class accuracy");
    c.close(f1, 0.6, tol, "3-class macro F1");
    let (acc, f1, ..) = score_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
    c.check(acc == 1.0 && f1 == 1.0, "all correct");
    for _ in 0..200 {
        let n = rng.gen_range(1..60);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let (acc, f1, _, counts, _) = score_predictions(&labels, &preds, 2).unwrap();
        let b = counts.unwrap();
        c.check(acc == (b.tp + b.tn) as f64 / n as f64, "Eq. 1 identity");
        let denom = 2 * b.tp + b.fp + b.fn_;
        let want = if denom == 0 { 0.0 } else { (2 * b.tp) as f64 / denom as f64 };
        c.check(f1 == want, "Eq. 2 identity");
    }

    gradient_checks(&mut c);
    c.verdict()
}

fn fixed_thresholds(correct: f64, conf: f64, negent: f64) -> ThresholdSet {
    let members = [MetricVector {
        correctness: correct,
        confidence: conf,
        negative_entropy: negent,
    }];
    let nonmembers = [MetricVector {
        correctness: correct - 1.0,
        confidence: conf - 1.0,
        negative_entropy: negent - 1.0,
    }];
    infer_thresholds(&members, &nonmembers).unwrap()
}

// ---- criteria 4-7, 10: desk-scale suite ------------------------------------

fn rows_of<'a>(rows: &'a [ResultRow], method: &str, k: f64, seed: u64) -> Vec<&'a ResultRow> {
    rows.iter()
        .filter(|r| r.method == method && r.k == k && r.seed == seed)
        .collect()
}

fn p_of(rows: &[&ResultRow], kind: &str, n: usize) -> f64 {
    rows.iter()
        .find(|r| r.query_kind == kind && r.n == n)
        .unwrap_or_else(|| panic!("no {kind} N={n} row"))
        .p_value
}

fn accuracy_of(rows: &[&ResultRow]) -> f64 {
    rows.first().expect("model has rows").accuracy
}

fn audit_separation(out: &SuiteOutcome, seeds: &[u64]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for &seed in seeds {
        let rows = rows_of(&out.rows, "independent_student", 1.0, seed);
        let qo = p_of(&rows, "QO", 1000);
        let qno: Vec<f64> = [10, 100, 500, 1000, 2000].iter().map(|&n| p_of(&rows, "QNO", n)).collect();
        let inversions = qno.windows(2).filter(|w| w[1] > w[0]).count();
        let ok = qo >= 0.05 && qno[3] <= 1e-4 && inversions <= 1;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: p(QO_1000)={qo:.2e} p(QNO_1000)={:.2e} inversions={inversions}",
            qno[3]
        ));
    }
    verdict(pass, parts.join("; "))
}

fn purity_trend(out: &SuiteOutcome, seeds: &[u64]) -> Verdict {
    let mut inversions = 0;
    let mut parts = Vec::new();
    for &seed in seeds {
        let rows = rows_of(&out.rows, "independent_student", 1.0, seed);
        let p: Vec<f64> = ["QM_k0.75", "QM_k0.50", "QM_k0.25"]
            .iter()
            .map(|kind| p_of(&rows, kind, 1000))
            .collect();
        inversions += p.windows(2).filter(|w| w[1] > w[0]).count();
        parts.push(format!("seed {seed}: {:.1e} → {:.1e} → {:.1e}", p[0], p[1], p[2]));
    }
    verdict(inversions <= 1, format!("{inversions} inversions; {}", parts.join("; ")))
}

fn forgetting_efficacy(out: &SuiteOutcome, seeds: &[u64]) -> Verdict {
    let med = |method: &str| {
        let v: Vec<f64> = seeds
            .iter()
            .map(|&s| p_of(&rows_of(&out.rows, method, 0.5, s), "QF", 1000))
            .collect();
        median(&v)
    };
    let (afs, plain) = (med("afs"), med("afs_without_audit"));
    verdict(
        afs <= 1e-3 * plain,
        format!("median p(QF_1000): AFS {afs:.2e} vs w/o audit {plain:.2e} (ratio {:.1e})", afs / plain),
    )
}

fn utility_retention(out: &SuiteOutcome, seeds: &[u64]) -> Verdict {
    let med = |method: &str| {
        let v: Vec<f64> = seeds
            .iter()
            .map(|&s| accuracy_of(&rows_of(&out.rows, method, 0.5, s)))
            .collect();
        median(&v)
    };
    let (afs, plain, independent) = (med("afs"), med("afs_without_audit"), med("independent_student"));
    verdict(
        afs >= independent - 0.02 && plain >= independent,
        format!("median accuracy: AFS {afs:.4}, w/o audit {plain:.4}, independent student {independent:.4}"),
    )
}

fn determinism(config: &SuiteConfig, first: &SuiteOutcome, first_dir: &Path) -> Verdict {
    let rerun_dir = tempfile::tempdir().expect("temp dir");
    let rerun = run_experiment_suite(config, rerun_dir.path()).expect("suite rerun");
    std::fs::remove_file(first_dir.join(RESULTS_FILE)).expect("remove results store");
    let resumed = run_experiment_suite(config, first_dir).expect("suite resume");
    let stored = store_hash(&first_dir.join(RESULTS_FILE)).expect("hash");
    verdict(
        rerun.hash == first.hash && resumed.hash == first.hash && stored == first.hash,
        format!(
            "fresh rerun {}, resumed from checkpoints {} (hash {}…)",
            if rerun.hash == first.hash { "identical" } else { "DIFFERS" },
            if resumed.hash == first.hash { "identical" } else { "DIFFERS" },
            &first.hash[..16]
        ),
    )
}

// ---- criterion 8 -----------------------------------------------------------

fn model_compression() -> Verdict {
    let input = InputShape::Image {
        channels: 1,
        height: 28,
        width: 28,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch: Vec<Sample> = (0..100)
        .map(|id| Sample {
            id,
            features: (0..input.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
            label: 0,
        })
        .collect();
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, teacher_spec, student_spec) in ModelSpec::shipped_pairs(input, 10) {
        let teacher = Model::build(teacher_spec, 0).unwrap();
        let student = Model::build(student_spec, 0).unwrap();
        let ratio = student.count_parameters() as f64 / teacher.count_parameters() as f64;
        pass &= ratio < 0.55;
        if teacher.spec().input != input {
            parts.push(format!("{name}: ratio {ratio:.3}"));
            continue;
        }
        let t = benchmark_inference_time(&teacher, &refs, 10).unwrap();
        let s = benchmark_inference_time(&student, &refs, 10).unwrap();
        pass &= s.mean_seconds < t.mean_seconds;
        parts.push(format!(
            "{name}: ratio {ratio:.3}, 100 samples {:.0}µs vs {:.0}µs",
            s.mean_seconds * 1e6,
            t.mean_seconds * 1e6
        ));
    }
    verdict(pass, parts.join("; "))
}

// ---- criterion 9 -----------------------------------------------------------

fn ablation_identity() -> Verdict {
    let cfg = SyntheticConfig {
        num_samples: 1500,
        ..Default::default()
    };
    let (shape, samples) = generate_synthetic(&cfg);
    let ds = Dataset::new("ablation", shape, 10, samples).unwrap();
    let mut manifest = sample_splits(
        &ds,
        PoolSizes {
            train: 600,
            test: 200,
            calibration: 200,
        },
        9,
    )
    .unwrap();
    let forget = build_query_set(&mut manifest, &ds, QueryKind::Forget, 100, 1.0, 9).unwrap();
    let partial = ds.select(&partial_train_ids(&manifest, &forget, 0.5, 9).unwrap()).unwrap();
    let input = InputShape::from(ds.shape);
    let config = TrainConfig {
        epochs: 6,
        learning_rate: 1e-3,
        seed: 9,
        lambda_audit: 0.0,
        ..Default::default()
    };
    let cal = train_calibration_model(
        &ds.select(&manifest.pools.calibration).unwrap(),
        &ModelSpec::mlp_student(input, 10),
        9,
        &config,
    )
    .unwrap();
    let thresholds = cal.thresholds(&ds).unwrap();
    let mut teacher = Model::build(ModelSpec::mlp_teacher(input, 10), 9).unwrap();
    unlearn_core::train::train_supervised(&mut teacher, &ds.select(&manifest.pools.train).unwrap(), &config)
        .unwrap();
    let forget_set = ForgetSet {
        query: &forget,
        samples: ds.select(&forget.ids).unwrap(),
    };
    let trajectory = |guided: bool| {
        let mut hashes = Vec::new();
        let mut student = Model::build(ModelSpec::mlp_student(input, 10), 9).unwrap();
        run_afs_observed(
            &teacher,
            &mut student,
            &partial,
            &forget_set,
            &thresholds,
            &config,
            guided,
            &mut |_, m| hashes.push(m.weight_hash()),
        )
        .unwrap();
        hashes
    };
    let (guided, plain) = (trajectory(true), trajectory(false));
    let identical = guided == plain && guided.len() == config.epochs;
    verdict(
        identical,
        format!(
            "{} epochs, {} weight hashes identical",
            guided.len(),
            guided.iter().zip(&plain).filter(|(a, b)| a == b).count()
        ),
    )
}

// ---- driver ----------------------------------------------------------------

fn run(results: &mut Vec<(usize, String, Verdict)>, id: usize, name: &str, f: impl FnOnce() -> Verdict) {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let line = format!(
        "criterion {id:>2} {:<28} {} ({:.1}s) {}",
        name,
        if v.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        v.detail
    );
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    results.push((id, name.to_string(), v));
}

fn main() {
    let mut results = Vec::new();
    run(&mut results, 1, "threshold oracle", threshold_oracle_equivalence);
    run(&mut results, 2, "p-value oracle", pvalue_oracle_equivalence);
    run(&mut results, 3, "formula suite", formula_suite);

    let config = SuiteConfig::load(&workspace_root().join("configs/desk.toml")).expect("desk config");
    let seeds = config.seeds.clone();
    let suite_dir = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let suite = catch_unwind(AssertUnwindSafe(|| run_experiment_suite(&config, suite_dir.path())));
    let _ = writeln!(
        std::io::stdout(),
        "desk suite: {} seeds in {:.1}s",
        seeds.len(),
        start.elapsed().as_secs_f64()
    );
    match suite {
        Ok(Ok(out)) => {
            let report_dir = suite_dir.path().join("report");
            emit_report(&out.rows, out.timing.as_ref(), &report_dir).expect("report");
            run(&mut results, 4, "audit separation", || audit_separation(&out, &seeds));
            run(&mut results, 5, "purity trend", || purity_trend(&out, &seeds));
            run(&mut results, 6, "forgetting efficacy", || forgetting_efficacy(&out, &seeds));
            run(&mut results, 7, "utility retention", || utility_retention(&out, &seeds));
            run(&mut results, 8, "model compression", model_compression);
            run(&mut results, 9, "ablation identity", ablation_identity);
            run(&mut results, 10, "determinism", || determinism(&config, &out, suite_dir.path()));
        }
        failure => {
            let why = match failure {
                Ok(Err(e)) => e.to_string(),
                _ => "suite panicked".to_string(),
            };
            for (id, name) in [
                (4, "audit separation"),
                (5, "purity trend"),
                (6, "forgetting efficacy"),
                (7, "utility retention"),
                (10, "determinism"),
            ] {
                run(&mut results, id, name, || verdict(false, format!("desk suite failed: {why}")));
            }
            run(&mut results, 8, "model compression", model_compression);
            run(&mut results, 9, "ablation identity", ablation_identity);
        }
    }

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, v)| !v.pass)
        .map(|(id, name, _)| format!("{id} ({name})"))
        .collect();
    let _ = writeln!(
        std::io::stdout(),
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        let _ = writeln!(std::io::stdout(), "failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
