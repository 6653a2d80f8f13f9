use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureShape, Sample};
use crate::error::{Error, Result};

pub(super) fn load_csv(
    path: &Path,
    label_column: &str,
    num_classes: usize,
) -> Result<(FeatureShape, Vec<Sample>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Schema(format!("no label column `{label_column}` in header")))?;
    let n_features = headers.len() - 1;

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record.map_err(|e| Error::Data {
            row,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Data {
                row,
                message: format!("{} cells, expected {}", record.len(), headers.len()),
            });
        }
        let mut features = Vec::with_capacity(n_features);
        let mut label = None;
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::Data {
                    row,
                    message: format!("empty cell in column `{}`", &headers[col]),
                });
            }
            if col == label_idx {
                let v: usize = cell.parse().map_err(|_| {
                    Error::Schema(format!("row {row}: label `{cell}` is not a class index"))
                })?;
                if v >= num_classes {
                    return Err(Error::Schema(format!(
                        "row {row}: label {v} outside [0, {num_classes})"
                    )));
                }
                label = Some(v);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Data {
                    row,
                    message: format!("`{cell}` is not numeric"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Data {
                        row,
                        message: format!("non-finite value in column `{}`", &headers[col]),
                    });
                }
                features.push(v);
            }
        }
        samples.push(Sample {
            id: i as u64,
            features,
            label: label.expect("label column present"),
        });
    }
    Ok((
        FeatureShape::Tabular {
            features: n_features,
        },
        samples,
    ))
}

/// Per-column min-max scaling fitted on one pool and applied to all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit<'a>(samples: impl Iterator<Item = &'a Sample>) -> Result<Self> {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for s in samples {
            if min.is_empty() {
                min = s.features.clone();
                max = s.features.clone();
                continue;
            }
            for (j, &v) in s.features.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if min.is_empty() {
            return Err(Error::Capacity("cannot fit a scaler on an empty pool".into()));
        }
        Ok(Self { min, max })
    }

    /// Constant columns map to 0.
    pub fn transform(&self, features: &mut [f64]) {
        for (j, v) in features.iter_mut().enumerate() {
            let range = self.max[j] - self.min[j];
            *v = if range > 0.0 { (*v - self.min[j]) / range } else { 0.0 };
        }
    }
}
