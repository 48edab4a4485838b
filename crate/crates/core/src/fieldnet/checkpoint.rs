//! Single-file model container.
//!
//! Layout: `u64` little-endian header length, a JSON header, then the raw
//! little-endian `float32` data of every tensor. The header holds
//! [`CheckpointMeta`] and, per tensor, its shape and element offset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, FieldModel, Stage};
use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::training::LossWeights;

const FORMAT: &str = "deformsdf-checkpoint";
const VERSION: u32 = 1;
const FORCE_CODES: &str = "force_codes";

/// Where a checkpoint came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub version: String,
    pub config_sha256: String,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub stage: Stage,
    pub tool_ids: Vec<String>,
    pub force_keys: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    shape: [usize; 2],
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    metadata: CheckpointMeta,
    tensors: BTreeMap<String, TensorEntry>,
}

pub fn save_checkpoint(path: &Path, model: &FieldModel, provenance: &Provenance) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut data: Vec<f32> = Vec::with_capacity(model.param_count() + model.force_codes.data.len());
    let all = model
        .names
        .iter()
        .map(String::as_str)
        .zip(&model.params)
        .chain(std::iter::once((FORCE_CODES, &model.force_codes)));
    for (name, m) in all {
        tensors.insert(
            name.to_string(),
            TensorEntry {
                shape: [m.rows, m.cols],
                offset: data.len(),
            },
        );
        data.extend_from_slice(&m.data);
    }
    let header = Header {
        metadata: CheckpointMeta {
            format: FORMAT.into(),
            version: VERSION,
            arch: model.arch.clone(),
            weights: model.weights.clone(),
            stage: model.stage,
            tool_ids: model.tool_ids.clone(),
            force_keys: model.force_keys.clone(),
            provenance: provenance.clone(),
        },
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let mut bytes = Vec::with_capacity(8 + json.len() + 4 * data.len());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, checking every tensor against the architecture.
pub fn load_checkpoint(path: &Path) -> Result<(FieldModel, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::format(path, reason);
    if bytes.len() < 8 {
        return Err(bad("truncated header".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;
    let meta = header.metadata;
    if meta.format != FORMAT || meta.version != VERSION {
        return Err(bad(format!("unsupported format {} v{}", meta.format, meta.version)));
    }
    let raw = &bytes[8 + hlen..];
    if raw.len() % 4 != 0 {
        return Err(bad("data section is not a whole number of float32 values".into()));
    }
    let floats: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    // rebuild the skeleton, then overwrite every tensor
    let mut model = FieldModel::new(&meta.arch, &meta.weights, &meta.tool_ids, 0)?;
    let take = |name: &str, rows: usize, cols: usize| -> Result<Mat<f32>> {
        let e = header
            .tensors
            .get(name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if e.shape != [rows, cols] {
            return Err(bad(format!(
                "tensor {name} has shape {:?}, architecture needs [{rows}, {cols}]",
                e.shape
            )));
        }
        let slice = floats
            .get(e.offset..e.offset + rows * cols)
            .ok_or_else(|| bad(format!("tensor {name} runs past the data section")))?;
        Ok(Mat::from_vec(rows, cols, slice.to_vec()))
    };
    for i in 0..model.params.len() {
        let (r, c) = model.params[i].shape();
        model.params[i] = take(&model.names[i], r, c)?;
    }
    model.force_codes = take(FORCE_CODES, meta.force_keys.len(), meta.arch.force_code_dim)?;
    if header.tensors.len() != model.params.len() + 1 {
        return Err(bad("checkpoint holds tensors the architecture does not define".into()));
    }
    if floats.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    model.force_keys = meta.force_keys.clone();
    model.stage = meta.stage;
    Ok((model, meta))
}
