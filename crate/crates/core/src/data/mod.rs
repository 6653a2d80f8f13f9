//! Datasets, seeded pools and query sets.

mod idx;
mod imagedir;
mod split;
mod synthetic;
mod tabular;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use idx::{read_idx_images, read_idx_labels, IdxImages};
pub use split::{
    build_query_set, load_manifest, load_manifest_for, overlap_count, partial_train_ids,
    persist_manifest, sample_splits, sub_query_set, PoolSizes, Pools, QueryKind, QuerySet,
    SplitManifest, MANIFEST_VERSION,
};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use tabular::MinMaxScaler;

/// One labelled example. Image features are stored row-major as H×W×C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureShape {
    Image {
        height: usize,
        width: usize,
        channels: usize,
    },
    Tabular {
        features: usize,
    },
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        match *self {
            FeatureShape::Image {
                height,
                width,
                channels,
            } => height * width * channels,
            FeatureShape::Tabular { features } => features,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum DatasetSource {
    /// IDX archives (`0x00000803` images, `0x00000801` labels).
    Idx { images: PathBuf, labels: PathBuf },
    /// CSV with a header row; every column except `label_column` is a feature.
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
    /// Directory of image files plus an index CSV with `file,label` columns.
    ImageDir {
        dir: PathBuf,
        index: PathBuf,
        height: usize,
        width: usize,
        channels: usize,
    },
    /// Class-conditional blob images generated in memory.
    Synthetic(SyntheticConfig),
}

fn default_label_column() -> String {
    "label".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub num_classes: usize,
    pub source: DatasetSource,
}

/// An ordered collection of samples sharing one feature shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub shape: FeatureShape,
    pub num_classes: usize,
    samples: Vec<Sample>,
    index: HashMap<u64, usize>,
}

impl Dataset {
    /// Validates ids, labels and features, then orders samples by id.
    pub fn new(
        name: impl Into<String>,
        shape: FeatureShape,
        num_classes: usize,
        mut samples: Vec<Sample>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Schema("dataset must have at least one class".into()));
        }
        samples.sort_by_key(|s| s.id);
        let mut index = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if index.insert(s.id, pos).is_some() {
                return Err(Error::Schema(format!("duplicate sample id {}", s.id)));
            }
            if s.label >= num_classes {
                return Err(Error::Schema(format!(
                    "sample {} has label {} outside [0, {num_classes})",
                    s.id, s.label
                )));
            }
            if s.features.len() != shape.len() {
                return Err(Error::Schema(format!(
                    "sample {} has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    shape.len()
                )));
            }
            if let Some(bad) = s.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data {
                    row: pos,
                    message: format!("sample {} feature {bad} is not finite", s.id),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            shape,
            num_classes,
            samples,
            index,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.index.get(&id).map(|&i| &self.samples[i])
    }

    /// Resolves ids in the given order.
    pub fn select(&self, ids: &[u64]) -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|&id| {
                self.get(id)
                    .ok_or_else(|| Error::Validation(format!("id {id} not in dataset {}", self.name)))
            })
            .collect()
    }

    /// Min-max scales tabular features using statistics of `train_ids` only.
    pub fn scale_tabular(&mut self, train_ids: &[u64]) -> Result<MinMaxScaler> {
        if !matches!(self.shape, FeatureShape::Tabular { .. }) {
            return Err(Error::Schema("min-max scaling applies to tabular data only".into()));
        }
        let scaler = MinMaxScaler::fit(self.select(train_ids)?.into_iter())?;
        for s in &mut self.samples {
            scaler.transform(&mut s.features);
        }
        Ok(scaler)
    }
}

/// Loads every sample described by `descriptor`, ordered by id.
///
/// Image pixels are scaled to `[0, 1]`. Tabular features are returned raw;
/// call [`Dataset::scale_tabular`] once the training pool is known.
pub fn load_dataset(descriptor: &DatasetDescriptor) -> Result<Dataset> {
    let c = descriptor.num_classes;
    let (shape, samples) = match &descriptor.source {
        DatasetSource::Idx { images, labels } => idx::load_idx_pair(images, labels, c)?,
        DatasetSource::Csv { path, label_column } => tabular::load_csv(path, label_column, c)?,
        DatasetSource::ImageDir {
            dir,
            index,
            height,
            width,
            channels,
        } => imagedir::load_image_dir(dir, index, *height, *width, *channels, c)?,
        DatasetSource::Synthetic(cfg) => {
            if cfg.num_classes != c {
                return Err(Error::Schema(format!(
                    "synthetic generator has {} classes, descriptor says {c}",
                    cfg.num_classes
                )));
            }
            generate_synthetic(cfg)
        }
    };
    Dataset::new(descriptor.name.clone(), shape, c, samples)
}
