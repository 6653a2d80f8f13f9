use std::path::Path;

use super::{FeatureShape, Sample};
use crate::error::{Error, Result};

/// Reads `index` (CSV with `file,label` header) and decodes each referenced image.
pub(super) fn load_image_dir(
    dir: &Path,
    index: &Path,
    height: usize,
    width: usize,
    channels: usize,
    num_classes: usize,
) -> Result<(FeatureShape, Vec<Sample>)> {
    if channels != 1 && channels != 3 {
        return Err(Error::Schema(format!("unsupported channel count {channels}")));
    }
    let mut reader = csv::Reader::from_path(index)
        .map_err(|e| Error::Format(format!("{}: {e}", index.display())))?;
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Data {
            row,
            message: e.to_string(),
        })?;
        let (file, label) = match (record.get(0), record.get(1)) {
            (Some(f), Some(l)) if !f.trim().is_empty() && !l.trim().is_empty() => (f.trim(), l.trim()),
            _ => {
                return Err(Error::Data {
                    row,
                    message: "expected `file,label`".into(),
                })
            }
        };
        let label: usize = label
            .parse()
            .map_err(|_| Error::Schema(format!("row {row}: label `{label}` is not a class index")))?;
        if label >= num_classes {
            return Err(Error::Schema(format!(
                "row {row}: label {label} outside [0, {num_classes})"
            )));
        }
        let path = dir.join(file);
        let img = image::open(&path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if img.height() as usize != height || img.width() as usize != width {
            return Err(Error::Schema(format!(
                "{} is {}x{}, expected {height}x{width}",
                path.display(),
                img.height(),
                img.width()
            )));
        }
        let features: Vec<f64> = if channels == 1 {
            img.to_luma8().into_raw().into_iter().map(|p| f64::from(p) / 255.0).collect()
        } else {
            img.to_rgb8().into_raw().into_iter().map(|p| f64::from(p) / 255.0).collect()
        };
        samples.push(Sample {
            id: i as u64,
            features,
            label,
        });
    }
    Ok((
        FeatureShape::Image {
            height,
            width,
            channels,
        },
        samples,
    ))
}
