use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{benchmark_inference_time, evaluate, Timing};
use crate::audit::{audit_query, split_calibration, Calibration, ThresholdSet};
use crate::data::{
    build_query_set, load_dataset, load_manifest_for, partial_train_ids, persist_manifest,
    sample_splits, sub_query_set, Dataset, DatasetDescriptor, FeatureShape, PoolSizes, QueryKind,
    QuerySet, Sample, SplitManifest,
};
use crate::error::{Error, Result};
use crate::model::{
    load_checkpoint_expecting, save_checkpoint, Architecture, InputShape, Model, ModelSpec, Role,
};
use crate::train::{run_afs, train_supervised, write_history_csv, ForgetSet, TrainConfig};

pub const RESULTS_FILE: &str = "results.csv";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Independent teacher on the full training pool.
    Teacher,
    /// Independent students on the full pool and on each partial pool.
    Students,
    /// Distillation without the audit loss.
    Distill,
    /// Audit-guided distillation.
    Forget,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Teacher, Stage::Students, Stage::Distill, Stage::Forget];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::Students => "students",
            Stage::Distill => "distill",
            Stage::Forget => "forget",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IndependentTeacher,
    IndependentStudent,
    AfsWithoutAudit,
    Afs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::IndependentTeacher => "independent_teacher",
            Method::IndependentStudent => "independent_student",
            Method::AfsWithoutAudit => "afs_without_audit",
            Method::Afs => "afs",
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            Method::IndependentTeacher => Stage::Teacher,
            Method::IndependentStudent => Stage::Students,
            Method::AfsWithoutAudit => Stage::Distill,
            Method::Afs => Stage::Forget,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub teacher: Architecture,
    pub student: Architecture,
}

impl Default for ModelChoice {
    fn default() -> Self {
        Self {
            teacher: Architecture::Mlp { hidden: vec![512, 256] },
            student: Architecture::Mlp { hidden: vec![128] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub dataset: DatasetDescriptor,
    pub pools: PoolSizes,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub models: ModelChoice,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<f64>,
    /// Sizes of the QO and QNO queries.
    #[serde(default = "default_query_sizes")]
    pub query_sizes: Vec<usize>,
    /// Size of every QM query.
    #[serde(default = "default_mixed_size")]
    pub mixed_size: usize,
    /// Nested QF sizes; the largest is the forget set.
    #[serde(default = "default_forget_sizes")]
    pub forget_sizes: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    /// Repeats for the teacher/student timing benchmark; 0 disables it.
    #[serde(default = "default_bench_repeats")]
    pub bench_repeats: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_k_grid() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}
fn default_query_sizes() -> Vec<usize> {
    vec![1, 10, 100, 500, 1000, 2000]
}
fn default_mixed_size() -> usize {
    1000
}
fn default_forget_sizes() -> Vec<usize> {
    vec![100, 1000]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}
fn default_bench_repeats() -> usize {
    20
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("suite config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.k_grid.iter().any(|k| !(*k > 0.0 && *k <= 1.0)) {
            return Err(Error::Config("k values must lie in (0, 1]".into()));
        }
        if self.forget_sizes.is_empty() || self.forget_sizes.contains(&0) {
            return Err(Error::Config("forget sizes must be nonempty and positive".into()));
        }
        if self.query_sizes.contains(&0) || self.mixed_size == 0 {
            return Err(Error::Config("query sizes must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn forget_size(&self) -> usize {
        self.forget_sizes.iter().copied().max().unwrap_or(0)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            ..self.train.clone()
        }
    }

    fn specs(&self, shape: FeatureShape) -> (ModelSpec, ModelSpec) {
        let input = InputShape::from(shape);
        let c = self.dataset.num_classes;
        let spec = |architecture: &Architecture, role| ModelSpec {
            architecture: architecture.clone(),
            input: input.clone(),
            num_classes: c,
            role,
        };
        (
            spec(&self.models.teacher, Role::Teacher),
            spec(&self.models.student, Role::Student),
        )
    }
}

/// One row of the results store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    /// Training fraction of the model (1 for full-pool models).
    pub k: f64,
    /// `QO`, `QNO`, `QF`, or `QM_k<overlap>`.
    pub query_kind: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub p_value: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub params: usize,
    pub seed: u64,
}

pub fn query_kind_label(query: &QuerySet) -> String {
    match query.kind {
        QueryKind::Mixed => format!("QM_k{:.2}", query.overlap_fraction),
        kind => kind.tag().to_string(),
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Format(format!("results row: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Format(format!("results store: {e}")))?;
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Data {
                row: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// sha256 of the results store bytes.
pub fn store_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

fn k_tag(k: f64) -> String {
    format!("k{k:.2}")
}

/// Trained state and artefacts for one seed of a suite.
pub struct SeedRun<'c> {
    pub config: &'c SuiteConfig,
    pub seed: u64,
    pub dir: PathBuf,
    pub dataset: Dataset,
    pub manifest: SplitManifest,
    teacher_spec: ModelSpec,
    student_spec: ModelSpec,
    calibration: Option<(Calibration, ThresholdSet)>,
    teacher: Option<Model>,
}

impl<'c> SeedRun<'c> {
    /// Loads the seed's manifest from `root/seed_<seed>` or creates it.
    pub fn open(config: &'c SuiteConfig, mut dataset: Dataset, root: &Path, seed: u64) -> Result<Self> {
        config.validate()?;
        let dir = root.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            load_manifest_for(&manifest_path, &dataset)?
        } else {
            let manifest = build_manifest(config, &dataset, seed)?;
            persist_manifest(&manifest, &manifest_path)?;
            manifest
        };
        if matches!(dataset.shape, FeatureShape::Tabular { .. }) {
            dataset.scale_tabular(&manifest.pools.train)?;
        }
        let (teacher_spec, student_spec) = config.specs(dataset.shape);
        teacher_spec.validate()?;
        student_spec.validate()?;
        Ok(Self {
            config,
            seed,
            dir,
            dataset,
            manifest,
            teacher_spec,
            student_spec,
            calibration: None,
            teacher: None,
        })
    }

    pub fn teacher_spec(&self) -> &ModelSpec {
        &self.teacher_spec
    }

    pub fn student_spec(&self) -> &ModelSpec {
        &self.student_spec
    }

    fn samples(&self, ids: &[u64]) -> Result<Vec<&Sample>> {
        self.dataset.select(ids)
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.json"))
    }

    pub fn forget_query(&self) -> Result<&QuerySet> {
        self.manifest
            .query(&format!("QF_N{}", self.config.forget_size()))
    }

    fn load_existing(&self, name: &str, spec: &ModelSpec) -> Result<Option<Model>> {
        let path = self.checkpoint_path(name);
        if !path.exists() {
            return Ok(None);
        }
        let (model, meta) = load_checkpoint_expecting(&path, spec)?;
        if meta.manifest_hash != self.manifest.hash() {
            return Err(Error::Compatibility(format!(
                "checkpoint {} was trained against another split manifest",
                path.display()
            )));
        }
        log::info!("seed {}: reusing {}", self.seed, path.display());
        Ok(Some(model))
    }

    fn save(&self, name: &str, model: &Model) -> Result<()> {
        save_checkpoint(
            model,
            &self.checkpoint_path(name),
            self.seed,
            self.config.train.epochs,
            &self.dataset.name,
            &self.manifest.hash(),
        )?;
        Ok(())
    }

    /// The calibration model (trained once and cached) and its thresholds.
    pub fn calibration(&mut self) -> Result<&(Calibration, ThresholdSet)> {
        if self.calibration.is_none() {
            let spec = self.student_spec.clone();
            let cal_seed = derive_seed(self.seed, 1);
            let (train_ids, test_ids) = split_calibration(&self.manifest.pools.calibration, cal_seed);
            let model = match self.load_existing("calibration", &spec)? {
                Some(model) => model,
                None => {
                    let mut model = Model::build(spec, cal_seed)?;
                    let config = TrainConfig {
                        seed: cal_seed,
                        ..self.config.train_config()
                    };
                    let history = train_supervised(&mut model, &self.samples(&train_ids)?, &config)?;
                    write_history_csv(&self.dir.join("calibration.history.csv"), &history)?;
                    self.save("calibration", &model)?;
                    model
                }
            };
            let calibration = Calibration {
                model,
                train_ids,
                test_ids,
                seed: cal_seed,
            };
            let thresholds = calibration.thresholds(&self.dataset)?;
            let path = self.dir.join("thresholds.json");
            let text = serde_json::to_string_pretty(&thresholds).expect("thresholds serialize");
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            self.calibration = Some((calibration, thresholds));
        }
        Ok(self.calibration.as_ref().expect("just set"))
    }

    pub fn thresholds(&mut self) -> Result<ThresholdSet> {
        Ok(self.calibration()?.1.clone())
    }

    fn allowed(&self, stage: Stage) -> bool {
        self.config.stages.contains(&stage)
    }

    fn missing(&self, stage: Stage, name: &str) -> Error {
        Error::Dependency {
            stage: stage.name().to_string(),
            detail: format!(
                "no checkpoint {} and the stage is not enabled",
                self.checkpoint_path(name).display()
            ),
        }
    }

    pub fn teacher(&mut self) -> Result<&Model> {
        if self.teacher.is_none() {
            let spec = self.teacher_spec.clone();
            let model = match self.load_existing("teacher", &spec)? {
                Some(model) => model,
                None if self.allowed(Stage::Teacher) => {
                    let mut model = Model::build(spec, derive_seed(self.seed, 2))?;
                    let config = TrainConfig {
                        seed: self.seed,
                        ..self.config.train_config()
                    };
                    let history =
                        train_supervised(&mut model, &self.samples(&self.manifest.pools.train)?, &config)?;
                    write_history_csv(&self.dir.join("teacher.history.csv"), &history)?;
                    self.save("teacher", &model)?;
                    model
                }
                None => return Err(self.missing(Stage::Teacher, "teacher")),
            };
            self.teacher = Some(model);
        }
        Ok(self.teacher.as_ref().expect("just set"))
    }

    fn train_ids(&self, k: f64) -> Result<Vec<u64>> {
        if k >= 1.0 {
            return Ok(self.manifest.pools.train.clone());
        }
        partial_train_ids(&self.manifest, self.forget_query()?, k, derive_seed(self.seed, 3))
    }

    fn student_name(method: Method, k: f64) -> String {
        match method {
            Method::IndependentTeacher => "teacher".into(),
            Method::IndependentStudent if k >= 1.0 => "student_full".into(),
            Method::IndependentStudent => format!("student_{}", k_tag(k)),
            Method::AfsWithoutAudit => format!("afs_without_audit_{}", k_tag(k)),
            Method::Afs => format!("afs_{}", k_tag(k)),
        }
    }

    /// The model for `method` at training fraction `k`, loaded from its
    /// checkpoint or trained if its stage is enabled.
    pub fn model(&mut self, method: Method, k: f64) -> Result<Model> {
        if method == Method::IndependentTeacher {
            return self.teacher().cloned();
        }
        let name = Self::student_name(method, k);
        let spec = self.student_spec.clone();
        if let Some(model) = self.load_existing(&name, &spec)? {
            return Ok(model);
        }
        if !self.allowed(method.stage()) {
            return Err(self.missing(method.stage(), &name));
        }
        let mut model = Model::build(spec, derive_seed(self.seed, 4))?;
        let config = TrainConfig {
            seed: self.seed,
            ..self.config.train_config()
        };
        let ids = self.train_ids(k)?;
        let history = match method {
            Method::IndependentStudent => train_supervised(&mut model, &self.samples(&ids)?, &config)?,
            Method::AfsWithoutAudit | Method::Afs => {
                let thresholds = self.thresholds()?;
                self.teacher()?;
                let teacher = self.teacher.as_ref().expect("loaded above");
                let forget_query = self.forget_query()?;
                let forget = ForgetSet {
                    query: forget_query,
                    samples: self.dataset.select(&forget_query.ids)?,
                };
                let partial = self.dataset.select(&ids)?;
                let before = teacher.weight_hash();
                let outcome = run_afs(
                    teacher,
                    &mut model,
                    &partial,
                    &forget,
                    &thresholds,
                    &config,
                    method == Method::Afs,
                )?;
                debug_assert_eq!(before, teacher.weight_hash());
                outcome.history
            }
            Method::IndependentTeacher => unreachable!("handled above"),
        };
        write_history_csv(&self.dir.join(format!("{name}.history.csv")), &history)?;
        self.save(&name, &model)?;
        Ok(model)
    }

    /// Queries in report order: QO and QNO by size, QM by overlap, QF by size.
    pub fn queries(&self) -> Vec<&QuerySet> {
        let mut queries: Vec<&QuerySet> = self.manifest.query_sets.values().collect();
        queries.sort_by(|a, b| {
            (a.kind, a.overlap_fraction.to_bits(), a.size).cmp(&(b.kind, b.overlap_fraction.to_bits(), b.size))
        });
        queries
    }

    /// Evaluates and audits `model` against every query of the manifest.
    pub fn rows_for(&mut self, method: Method, k: f64, model: &Model) -> Result<Vec<ResultRow>> {
        let thresholds = self.thresholds()?;
        let report = evaluate(model, &self.samples(&self.manifest.pools.test)?, &self.dataset.name)?;
        let params = model.count_parameters();
        let mut rows = Vec::new();
        for query in self.queries() {
            let audit = audit_query(model, &self.dataset, query, &thresholds, self.config.alpha)?;
            rows.push(ResultRow {
                method: method.name().to_string(),
                k,
                query_kind: query_kind_label(query),
                n: query.size,
                p_value: audit.p_value,
                accuracy: report.accuracy,
                f1: report.f1,
                params,
                seed: self.seed,
            });
        }
        Ok(rows)
    }

    /// Methods and training fractions enabled by the config, in suite order.
    pub fn plan(&self) -> Vec<(Method, f64)> {
        let mut plan = Vec::new();
        let stages: BTreeSet<Stage> = self.config.stages.iter().copied().collect();
        if stages.contains(&Stage::Teacher) {
            plan.push((Method::IndependentTeacher, 1.0));
        }
        if stages.contains(&Stage::Students) {
            plan.push((Method::IndependentStudent, 1.0));
            plan.extend(self.config.k_grid.iter().map(|&k| (Method::IndependentStudent, k)));
        }
        for (stage, method) in [(Stage::Distill, Method::AfsWithoutAudit), (Stage::Forget, Method::Afs)] {
            if stages.contains(&stage) {
                plan.extend(self.config.k_grid.iter().map(|&k| (method, k)));
            }
        }
        plan
    }
}

fn build_manifest(config: &SuiteConfig, dataset: &Dataset, seed: u64) -> Result<SplitManifest> {
    let mut manifest = sample_splits(dataset, config.pools, seed)?;
    for &n in &config.query_sizes {
        build_query_set(&mut manifest, dataset, QueryKind::Overlapping, n, 1.0, derive_seed(seed, 10))?;
        build_query_set(&mut manifest, dataset, QueryKind::Disjoint, n, 0.0, derive_seed(seed, 11))?;
    }
    for &k in &config.k_grid {
        build_query_set(&mut manifest, dataset, QueryKind::Mixed, config.mixed_size, k, derive_seed(seed, 12))?;
    }
    let forget = build_query_set(
        &mut manifest,
        dataset,
        QueryKind::Forget,
        config.forget_size(),
        1.0,
        derive_seed(seed, 13),
    )?;
    for &n in &config.forget_sizes {
        if n < forget.size {
            sub_query_set(&mut manifest, &forget, n, derive_seed(seed, 14))?;
        }
    }
    manifest.validate()?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub rows: Vec<ResultRow>,
    pub results_path: PathBuf,
    pub hash: String,
    pub timing: Option<TimingTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub role: Role,
    pub params: usize,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub batch: usize,
    pub entries: Vec<TimingEntry>,
}

/// Times the seed's teacher and full-pool student on 100 test samples.
pub fn benchmark_pair(run: &mut SeedRun<'_>, repeats: usize) -> Result<TimingTable> {
    let teacher = run.teacher()?.clone();
    let student = run.model(Method::IndependentStudent, 1.0)?;
    let ids: Vec<u64> = run.manifest.pools.test.iter().take(100).copied().collect();
    let batch = run.dataset.select(&ids)?;
    let entries = [(Role::Teacher, &teacher), (Role::Student, &student)]
        .into_iter()
        .map(|(role, model)| {
            Ok(TimingEntry {
                role,
                params: model.count_parameters(),
                timing: benchmark_inference_time(model, &batch, repeats)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TimingTable {
        batch: batch.len(),
        entries,
    })
}

/// Runs every enabled stage for every seed, reusing checkpoints under `root`,
/// and writes `root/results.csv`.
pub fn run_experiment_suite(config: &SuiteConfig, root: &Path) -> Result<SuiteOutcome> {
    config.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let dataset = load_dataset(&config.dataset)?;
    run_experiment_suite_on(config, &dataset, root)
}

/// [`run_experiment_suite`] over an already loaded dataset.
pub fn run_experiment_suite_on(config: &SuiteConfig, dataset: &Dataset, root: &Path) -> Result<SuiteOutcome> {
    config.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let needs_teacher = config
        .stages
        .iter()
        .any(|s| matches!(s, Stage::Distill | Stage::Forget));
    let mut rows = Vec::new();
    let mut timing = None;
    for &seed in &config.seeds {
        let mut run = SeedRun::open(config, dataset.clone(), root, seed)?;
        if needs_teacher {
            run.teacher()?;
        }
        for (method, k) in run.plan() {
            log::info!("seed {seed}: {method} k={k}");
            let model = run.model(method, k)?;
            rows.extend(run.rows_for(method, k, &model)?);
        }
        if timing.is_none()
            && config.bench_repeats > 0
            && run.allowed(Stage::Teacher)
            && run.allowed(Stage::Students)
        {
            let table = benchmark_pair(&mut run, config.bench_repeats)?;
            let path = root.join(TIMING_FILE);
            let text = serde_json::to_string_pretty(&table).expect("timing serializes");
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            timing = Some(table);
        }
    }
    let results_path = root.join(RESULTS_FILE);
    let hash = write_results(&results_path, &rows)?;
    Ok(SuiteOutcome {
        rows,
        results_path,
        hash,
        timing,
    })
}
