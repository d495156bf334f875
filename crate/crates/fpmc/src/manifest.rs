//! Reproducibility manifests: every CLI run records its resolved
//! configuration, seeds, and input digests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// SHA-256 digest of a byte slice, hex encoded.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// SHA-256 digest of a file.
pub fn digest_file(path: &Path) -> Result<String> {
    Ok(digest_bytes(&std::fs::read(path)?))
}

/// SHA-256 digest of an f64 matrix (little-endian bytes, row-major); used to
/// fingerprint noise batches and samples.
pub fn digest_matrix(m: ndarray::ArrayView2<'_, f64>) -> String {
    let mut hasher = Sha256::new();
    for &v in m.iter() {
        hasher.update(v.to_le_bytes());
    }
    format!("{:x}", hasher.finalize())
}

/// The record a command writes next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration (after config-file merge and defaults).
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Input path -> SHA-256 digest.
    pub inputs: BTreeMap<String, String>,
    /// Extra fingerprints (noise digests, sample digests).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fingerprints: BTreeMap<String, String>,
    /// Wall-clock timestamp (seconds since the epoch). Excluded from
    /// idempotency comparisons.
    pub created_at: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            fingerprints: BTreeMap::new(),
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    /// Digest a directory input by hashing its manifest file.
    pub fn add_dir_input(&mut self, dir: &Path) -> Result<()> {
        let manifest = dir.join("manifest.json");
        if manifest.is_file() {
            self.inputs
                .insert(dir.display().to_string(), digest_file(&manifest)?);
        }
        Ok(())
    }

    pub fn add_fingerprint(&mut self, name: &str, digest: String) {
        self.fingerprints.insert(name.to_string(), digest);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run_manifest.json"), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Equality modulo the timestamp; two runs of the same command with the
    /// same inputs must agree on this.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        self.command == other.command
            && self.config == other.config
            && self.seed == other.seed
            && self.inputs == other.inputs
            && self.fingerprints == other.fingerprints
    }
}

/// Provenance of an externally generated dataset: which seed produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedManifest {
    pub purpose: String,
    pub seed: u64,
}

impl SeedManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
