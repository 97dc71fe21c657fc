//! Checkpoint directories: `meta.json` plus one little-endian `f32` blob per
//! parameter tensor, named by its dotted parameter path.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use syn2real_tensor::{ParamStore, Scalar, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub architecture: serde_json::Value,
    pub step: u64,
    pub config_hash: String,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub const META: &str = "meta.json";

impl CheckpointMeta {
    pub fn new(kind: &str, architecture: serde_json::Value, step: u64, config_hash: &str, extra: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            architecture,
            step,
            config_hash: config_hash.into(),
            tensors: Vec::new(),
            extra,
        }
    }
}

pub fn save<T: Scalar>(dir: &Path, mut meta: CheckpointMeta, groups: &[(&str, &ParamStore<T>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    meta.tensors.clear();
    for (prefix, store) in groups {
        for (name, t) in store.iter() {
            let full = format!("{prefix}.{name}");
            let file = format!("{full}.bin");
            let mut bytes = Vec::with_capacity(4 * t.len());
            for v in t.data() {
                bytes.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            meta.tensors.push(TensorEntry {
                name: full,
                shape: t.shape().to_vec(),
                file,
            });
        }
    }
    let path = dir.join(META);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read checkpoint metadata {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Fills every store in `groups` from the blobs listed in `meta`, checking
/// names and shapes against the freshly built architecture.
pub fn load<T: Scalar>(dir: &Path, meta: &CheckpointMeta, groups: &mut [(&str, &mut ParamStore<T>)]) -> Result<()> {
    let expected: usize = groups.iter().map(|(_, s)| s.len()).sum();
    if meta.tensors.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, architecture has {expected}",
            meta.tensors.len()
        )));
    }
    for (prefix, store) in groups.iter_mut() {
        for i in 0..store.len() {
            let full = format!("{prefix}.{}", store.names()[i]);
            let entry = meta
                .tensors
                .iter()
                .find(|e| e.name == full)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {full}")))?;
            let want = store.tensors()[i].shape().to_vec();
            if entry.shape != want {
                return Err(Error::Format(format!(
                    "tensor {full}: checkpoint shape {:?}, architecture {:?}",
                    entry.shape, want
                )));
            }
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let numel: usize = want.iter().product();
            if bytes.len() != 4 * numel {
                return Err(Error::Format(format!(
                    "{}: {} bytes for {numel} floats",
                    path.display(),
                    bytes.len()
                )));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|b| T::from_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])).unwrap())
                .collect();
            store.tensors_mut()[i] = Tensor::from_vec(&want, data)?;
        }
    }
    Ok(())
}
