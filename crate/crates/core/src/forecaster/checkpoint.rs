//! Binary model checkpoints.
//!
//! ```text
//! offset  size  content
//! 0       8     magic  b"QKCVCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     manifest length M in bytes, u64 little-endian
//! 20      M     manifest, UTF-8 JSON (see `CheckpointManifest`)
//! 20+M    8·n   parameter values, f64 little-endian, in manifest order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

use super::config::ModelConfig;
use super::model::{build_model, Forecaster};

pub const MAGIC: &[u8; 8] = b"QKCVCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Start of this tensor in the payload, counted in f64 values.
    pub offset: usize,
    /// SHA-256 over the tensor's shape and little-endian values.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    pub params: Vec<TensorEntry>,
}

pub fn manifest(model: &Forecaster) -> CheckpointManifest {
    let mut offset = 0;
    let params = model
        .params
        .iter()
        .map(|(_, name, t)| {
            let e = TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                sha256: t.content_hash(),
            };
            offset += t.numel();
            e
        })
        .collect();
    CheckpointManifest {
        format_version: FORMAT_VERSION,
        seed: model.seed,
        config: model.config.clone(),
        params,
    }
}

pub fn to_bytes(model: &Forecaster) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&manifest(model))?;
    let mut out = Vec::with_capacity(20 + json.len() + model.params.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in model.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Forecaster> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a QKCV checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + len).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(json)?;
    let payload = &bytes[20 + len..];
    let mut model = build_model(&manifest.config, manifest.seed)?;
    if model.params.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, model has {}",
            manifest.params.len(),
            model.params.len()
        )));
    }
    for entry in &manifest.params {
        let id = model
            .params
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", entry.name)))?;
        let n: usize = entry.shape.iter().product();
        let raw = payload
            .get(entry.offset * 8..(entry.offset + n) * 8)
            .ok_or_else(|| Error::Checkpoint(format!("payload truncated at `{}`", entry.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::Checkpoint(format!("`{}`: {e}", entry.name)))?;
        if t.content_hash() != entry.sha256 {
            return Err(Error::Checkpoint(format!("hash mismatch for `{}`", entry.name)));
        }
        model
            .params
            .set(id, t)
            .map_err(|e| Error::Checkpoint(format!("`{}`: {e}", entry.name)))?;
    }
    Ok(model)
}

pub fn save(model: &Forecaster, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Forecaster> {
    from_bytes(&std::fs::read(path)?)
}
