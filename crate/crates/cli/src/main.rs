use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use unlearn_core::audit::audit_query;
use unlearn_core::data::load_dataset;
use unlearn_core::eval::{
    benchmark_pair, emit_report, evaluate, read_results, run_experiment_suite, Method, SeedRun, Stage,
    SuiteConfig, TimingTable, TIMING_FILE,
};

/// Membership auditing and audit-guided forgetting for classifiers.
#[derive(Parser)]
#[command(name = "unlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Suite configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run directory holding manifests, checkpoints and results.
    #[arg(long)]
    out: PathBuf,
    /// Seed to operate on; defaults to the first seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Teacher,
    Student,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    IndependentTeacher,
    IndependentStudent,
    AfsWithoutAudit,
    Afs,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::IndependentTeacher => Method::IndependentTeacher,
            MethodArg::IndependentStudent => Method::IndependentStudent,
            MethodArg::AfsWithoutAudit => Method::AfsWithoutAudit,
            MethodArg::Afs => Method::Afs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw pools and query sets and write the split manifest.
    Prepare(RunArgs),
    /// Train an independent teacher, or a student on the full or a partial pool.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        role: RoleArg,
        /// Training fraction for a student trained without the forget set.
        #[arg(long)]
        k: Option<f64>,
    },
    /// Distil the teacher into a student on a partial pool.
    Distill {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        k: f64,
        /// Plain distillation without the audit loss.
        #[arg(long)]
        no_audit: bool,
    },
    /// Audit-guided distillation; prints the final forget-set audit.
    Forget {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        k: f64,
    },
    /// Audit a query set against a trained model.
    Audit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// Query set name from the manifest, e.g. QNO_N1000.
        #[arg(long)]
        query: String,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Accuracy and F1 on the test pool.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
    },
    /// Time teacher and full-pool student inference on 100 test samples.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
    },
    /// Run every enabled stage for every seed and write the results store.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit tables and trend plots from a results store.
    Report {
        /// Results store (CSV).
        #[arg(long)]
        results: PathBuf,
        /// Output directory; defaults to `report/` next to the store.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, stages: Vec<Stage>) -> Result<SuiteConfig> {
    let mut config = SuiteConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    config.stages = stages;
    Ok(config)
}

fn with_run<T>(args: &RunArgs, stages: Vec<Stage>, f: impl FnOnce(&mut SeedRun<'_>) -> Result<T>) -> Result<T> {
    let config = load_config(&args.config, stages)?;
    let seed = match args.seed {
        Some(s) => s,
        None => config.seeds[0],
    };
    let dataset = load_dataset(&config.dataset).context("loading dataset")?;
    let mut run = SeedRun::open(&config, dataset, &args.out, seed)?;
    f(&mut run)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Prepare(run) => with_run(&run, vec![], |r| {
            let m = &r.manifest;
            println!(
                "seed {}: train {} test {} calibration {} ({} query sets), manifest {}",
                r.seed,
                m.pools.train.len(),
                m.pools.test.len(),
                m.pools.calibration.len(),
                m.query_sets.len(),
                r.dir.join("manifest.json").display()
            );
            Ok(())
        }),
        Command::Train { run, role, k } => {
            let (stage, method) = match role {
                RoleArg::Teacher if k.is_some() => bail!("--k applies to students only"),
                RoleArg::Teacher => (Stage::Teacher, Method::IndependentTeacher),
                RoleArg::Student => (Stage::Students, Method::IndependentStudent),
            };
            with_run(&run, vec![stage], |r| {
                let model = r.model(method, k.unwrap_or(1.0))?;
                println!("trained {method}: {} parameters, weights {}", model.count_parameters(), model.weight_hash());
                Ok(())
            })
        }
        Command::Distill { run, k, no_audit } => {
            let (stage, method) = if no_audit {
                (Stage::Distill, Method::AfsWithoutAudit)
            } else {
                (Stage::Forget, Method::Afs)
            };
            with_run(&run, vec![stage], |r| {
                let model = r.model(method, k)?;
                println!("trained {method} (k={k}): weights {}", model.weight_hash());
                Ok(())
            })
        }
        Command::Forget { run, k } => with_run(&run, vec![Stage::Forget], |r| {
            let model = r.model(Method::Afs, k)?;
            let thresholds = r.thresholds()?;
            let forget = r.forget_query()?.clone();
            let report = audit_query(&model, &r.dataset, &forget, &thresholds, r.config.alpha)?;
            print_json(&report)
        }),
        Command::Audit {
            run,
            method,
            k,
            query,
            alpha,
        } => with_run(&run, vec![], |r| {
            let model = r.model(method.into(), k)?;
            let thresholds = r.thresholds()?;
            let query = r.manifest.query(&query)?.clone();
            let alpha = alpha.unwrap_or(r.config.alpha);
            print_json(&audit_query(&model, &r.dataset, &query, &thresholds, alpha)?)
        }),
        Command::Evaluate { run, method, k } => with_run(&run, vec![], |r| {
            let model = r.model(method.into(), k)?;
            let test = r.dataset.select(&r.manifest.pools.test)?;
            print_json(&evaluate(&model, &test, &r.dataset.name)?)
        }),
        Command::Bench { run, repeats } => with_run(&run, vec![], |r| {
            let table = benchmark_pair(r, repeats)?;
            let path = run.out.join(TIMING_FILE);
            std::fs::write(&path, serde_json::to_string_pretty(&table)?)
                .with_context(|| format!("writing {}", path.display()))?;
            print_json(&table)
        }),
        Command::Suite { config, out } => {
            let config = SuiteConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let outcome = run_experiment_suite(&config, &out)?;
            println!(
                "{} rows written to {} (sha256 {})",
                outcome.rows.len(),
                outcome.results_path.display(),
                outcome.hash
            );
            Ok(())
        }
        Command::Report { results, out } => {
            let rows = read_results(&results)?;
            let base = results.parent().unwrap_or(Path::new("."));
            let out = out.unwrap_or_else(|| base.join("report"));
            let timing_path = base.join(TIMING_FILE);
            let timing: Option<TimingTable> = if timing_path.exists() {
                Some(serde_json::from_str(&std::fs::read_to_string(&timing_path)?)?)
            } else {
                None
            };
            for path in emit_report(&rows, timing.as_ref(), &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}
