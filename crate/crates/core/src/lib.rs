//! Dataset-level membership auditing and audit-guided forgetting.
//!
//! The crate is organised around the pipeline it implements:
//!
//! * [`data`] loads datasets, draws seeded disjoint pools and builds query sets.
//! * [`model`] defines teacher/student classifier families, inference and checkpoints.
//! * [`metrics`] computes per-sample membership metrics from class probabilities.
//! * [`audit`] calibrates per-metric thresholds and turns membership bits into a p-value.
//! * [`train`] holds the supervised, distillation and audit-guided purification loops.
//! * [`eval`] covers utility metrics, timing, the experiment runner and reporting.

pub mod audit;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
