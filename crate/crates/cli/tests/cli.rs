use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seeds = [7]
k_grid = [0.5]
query_sizes = [1, 10, 50]
mixed_size = 40
forget_sizes = [10, 40]
alpha = 0.05
stages = ["teacher", "students", "distill", "forget"]
bench_repeats = 5

[dataset]
name = "tiny-blobs"
num_classes = 4

[dataset.source]
format = "synthetic"
num_samples = 400
num_classes = 4
height = 6
width = 6
seed = 3

[pools]
train = 150
test = 100
calibration = 80

[models.teacher]
family = "mlp"
hidden = [32]

[models.student]
family = "mlp"
hidden = [8]

[train]
epochs = 3
learning_rate = 1e-3
batch_size = 32
"#;

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}

fn unlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = unlearn(args);
    assert!(
        out.status.success(),
        "unlearn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stage_by_stage_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let (c, o) = (config.to_str().unwrap(), tmp.path().join("run"));
    let o = o.to_str().unwrap();
    let base = ["--config", c, "--out", o];
    let with = |verb: &str, extra: &[&str]| -> Vec<String> {
        std::iter::once(verb)
            .chain(base.iter().copied())
            .chain(extra.iter().copied())
            .map(String::from)
            .collect()
    };
    let run = |verb: &str, extra: &[&str]| {
        let args = with(verb, extra);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    assert!(run("prepare", &[]).contains("train 150 test 100 calibration 80"));
    assert!(Path::new(o).join("seed_7/manifest.json").exists());
    run("train", &["--role", "teacher"]);
    run("train", &["--role", "student"]);
    run("train", &["--role", "student", "--k", "0.5"]);
    run("distill", &["--k", "0.5", "--no-audit"]);

    let forget: serde_json::Value = serde_json::from_str(&run("forget", &["--k", "0.5"])).unwrap();
    assert_eq!(forget["query"], "QF_N40");
    assert_eq!(forget["N"], 40);

    let audit: serde_json::Value = serde_json::from_str(&run(
        "audit",
        &["--method", "independent-teacher", "--query", "QNO_N50", "--alpha", "0.01"],
    ))
    .unwrap();
    assert_eq!(audit["alpha"], 0.01);
    let p = audit["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let eval: serde_json::Value = serde_json::from_str(&run(
        "evaluate",
        &["--method", "afs-without-audit", "--k", "0.5"],
    ))
    .unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() > 0.0);

    let bench: serde_json::Value = serde_json::from_str(&run("bench", &["--repeats", "5"])).unwrap();
    assert_eq!(bench["entries"].as_array().unwrap().len(), 2);
    assert!(Path::new(o).join("timing.json").exists());
}

#[test]
fn distill_without_teacher_is_a_dependency_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let o = tmp.path().join("run");
    let out = unlearn(&["distill", "--config", config.to_str().unwrap(), "--out", o.to_str().unwrap(), "--k", "0.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("teacher"));
}

#[test]
fn teacher_rejects_a_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let o = tmp.path().join("run");
    let out = unlearn(&[
        "train", "--config", config.to_str().unwrap(), "--out", o.to_str().unwrap(), "--role", "teacher", "--k", "0.5",
    ]);
    assert!(!out.status.success());
}

#[test]
fn suite_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let o = tmp.path().join("run");
    let printed = ok(&["suite", "--config", config.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert!(printed.contains("sha256"));
    let results = o.join("results.csv");
    let listed = ok(&["report", "--results", results.to_str().unwrap()]);
    for file in ["audit_table.md", "forgetting_table.md", "compression_table.md", "p_vs_n.svg"] {
        assert!(listed.contains(file), "{file} missing from {listed}");
        assert!(o.join("report").join(file).exists());
    }
}
