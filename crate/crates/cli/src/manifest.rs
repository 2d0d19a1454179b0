//! Reproducibility manifest: per stage, the hashes of every input and output plus the
//! parameters used. Contains no timestamps, so identical runs give identical manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| sha256_hex(&b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub params: serde_json::Value,
    /// Input label → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory → sha256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            tool: "arbor".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stages: BTreeMap::new(),
        }
    }
}

impl Manifest {
    /// Loads the manifest in `out`, or a fresh one if absent or unreadable.
    pub fn load(out: &Path) -> Self {
        std::fs::read(out.join(MANIFEST_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok())
            .filter(|m| m.version == env!("CARGO_PKG_VERSION"))
            .unwrap_or_default()
    }

    /// Whether `stage` already ran with these inputs and parameters and its outputs are
    /// still on disk unchanged.
    pub fn is_current(&self, out: &Path, stage: &str, inputs: &BTreeMap<String, String>, params: &serde_json::Value) -> bool {
        let Some(rec) = self.stages.get(stage) else { return false };
        &rec.inputs == inputs
            && &rec.params == params
            && rec
                .outputs
                .iter()
                .all(|(rel, hash)| sha256_file(&out.join(rel)).as_deref() == Some(hash.as_str()))
    }
}
