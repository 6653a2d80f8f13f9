//! Utility metrics, timing, experiment orchestration and reporting.

mod metrics;
pub mod plot;
mod report;
mod suite;

pub use metrics::{benchmark_inference_time, evaluate, score_predictions, BinaryCounts, EvalReport, Timing};
pub use report::{emit_report, median};
pub use suite::{
    benchmark_pair, query_kind_label, read_results, run_experiment_suite, run_experiment_suite_on,
    store_hash, write_results, Method, ModelChoice, ResultRow, SeedRun, Stage, SuiteConfig,
    SuiteOutcome, TimingEntry, TimingTable, RESULTS_FILE, TIMING_FILE,
};
