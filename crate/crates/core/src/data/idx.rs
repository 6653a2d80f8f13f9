//! IDX archives as used by MNIST-style datasets.

use std::path::Path;

use super::{FeatureShape, Sample};
use crate::error::{Error, Result};

const MAGIC_LABELS: u32 = 0x0000_0801;
const MAGIC_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("IDX header truncated".into()))
}

pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != MAGIC_IMAGES {
        return Err(Error::Format(format!(
            "expected IDX image magic {MAGIC_IMAGES:#010x}, found {magic:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let expected = count * rows * cols;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "IDX image body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != MAGIC_LABELS {
        return Err(Error::Format(format!(
            "expected IDX label magic {MAGIC_LABELS:#010x}, found {magic:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "IDX label body has {} bytes, header implies {count}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

pub(super) fn load_idx_pair(
    images: &Path,
    labels: &Path,
    num_classes: usize,
) -> Result<(FeatureShape, Vec<Sample>)> {
    let img_bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl_bytes = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let imgs = read_idx_images(&img_bytes)?;
    let lbls = read_idx_labels(&lbl_bytes)?;
    if imgs.count != lbls.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            imgs.count,
            lbls.len()
        )));
    }
    let per = imgs.rows * imgs.cols;
    let mut samples = Vec::with_capacity(imgs.count);
    for (i, &label) in lbls.iter().enumerate() {
        let label = label as usize;
        if label >= num_classes {
            return Err(Error::Schema(format!(
                "label {label} at index {i} outside [0, {num_classes})"
            )));
        }
        let features = imgs.pixels[i * per..(i + 1) * per]
            .iter()
            .map(|&p| f64::from(p) / 255.0)
            .collect();
        samples.push(Sample {
            id: i as u64,
            features,
            label,
        });
    }
    let shape = FeatureShape::Image {
        height: imgs.rows,
        width: imgs.cols,
        channels: 1,
    };
    Ok((shape, samples))
}

#[cfg(test)]
pub(crate) fn encode_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
pub(crate) fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
