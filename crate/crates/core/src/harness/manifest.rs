//! Run manifests and content hashes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git object hash of a blob in a SHA-256 repository: `sha256("blob <len>\0" ‖ bytes)`.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Everything needed to reproduce a run. Contains no timestamps or host
/// details, so repeated runs produce identical manifests.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub run_id: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Blob hash of each input, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// Hash over the sorted `role hash` lines of `inputs`.
    pub input_hash: String,
    /// Blob hash of each file written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, run_id: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            run_id: run_id.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            input_hash: String::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, bytes: &[u8]) {
        self.inputs.insert(role.to_string(), git_blob_hash(bytes));
        let lines: String = self.inputs.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
        self.input_hash = git_blob_hash(lines.as_bytes());
    }

    pub fn add_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), git_blob_hash(bytes));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
