//! Checkpoints: a little-endian weight blob plus a JSON sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const BLOB_MAGIC: &[u8; 4] = b"ULW1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub spec: ModelSpec,
    pub init_seed: u64,
    pub seed: u64,
    pub epochs: usize,
    pub dataset_name: String,
    pub manifest_hash: String,
    pub created_at: String,
    pub weights_file: String,
    pub weights_sha256: String,
    pub value_count: usize,
}

fn blob_path(meta_path: &Path) -> PathBuf {
    meta_path.with_extension("weights")
}

/// Writes `<path>` (metadata) and `<path stem>.weights` (blob).
pub fn save_checkpoint(
    model: &Model,
    path: &Path,
    seed: u64,
    epochs: usize,
    dataset_name: &str,
    manifest_hash: &str,
) -> Result<CheckpointMeta> {
    let values = model.state_values();
    let mut blob = Vec::with_capacity(12 + values.len() * 8);
    blob.extend_from_slice(BLOB_MAGIC);
    blob.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in &values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    let weights = blob_path(path);
    std::fs::write(&weights, &blob).map_err(|e| Error::io(&weights, e))?;
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        spec: model.spec().clone(),
        init_seed: model.seed(),
        seed,
        epochs,
        dataset_name: dataset_name.to_string(),
        manifest_hash: manifest_hash.to_string(),
        created_at: chrono::Utc::now().to_rfc3339(),
        weights_file: weights
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        weights_sha256: hex::encode(Sha256::digest(&blob)),
        value_count: values.len(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Integrity(format!("{}: unreadable metadata: {e}", path.display())))?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Compatibility(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            meta.version
        )));
    }
    let weights = path.with_file_name(&meta.weights_file);
    let blob = std::fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
    if hex::encode(Sha256::digest(&blob)) != meta.weights_sha256 {
        return Err(Error::Integrity(format!(
            "{} does not match its recorded hash",
            weights.display()
        )));
    }
    if blob.len() < 12 || &blob[..4] != BLOB_MAGIC {
        return Err(Error::Integrity("weight blob has no valid header".into()));
    }
    let count = u64::from_le_bytes(blob[4..12].try_into().expect("8 bytes")) as usize;
    if count != meta.value_count || blob.len() != 12 + count * 8 {
        return Err(Error::Integrity(format!(
            "weight blob holds {} bytes for {count} values",
            blob.len()
        )));
    }
    let values: Vec<f64> = blob[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = Model::build(meta.spec.clone(), meta.init_seed)?;
    model.load_state_values(&values)?;
    Ok((model, meta))
}

/// Like [`load_checkpoint`] but rejects a checkpoint built from another spec.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelSpec) -> Result<(Model, CheckpointMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Integrity(format!("{}: unreadable metadata: {e}", path.display())))?;
    if &meta.spec != expected {
        return Err(Error::Compatibility(format!(
            "checkpoint {} was built from a different model spec",
            path.display()
        )));
    }
    load_checkpoint(path)
}
