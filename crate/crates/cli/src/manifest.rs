use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Config hash, seed and artifact hashes for an output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    /// Artifact path relative to the output directory, to its SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    const FILE: &'static str = "manifest.json";

    /// Loads the manifest in `out`, starting afresh if it is missing or
    /// belongs to a different config or seed.
    pub fn open(out: &Path, config_sha256: &str, seed: u64) -> anyhow::Result<Manifest> {
        let path = out.join(Self::FILE);
        if path.is_file() {
            let existing: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            if existing.config_sha256 == config_sha256 && existing.seed == seed {
                return Ok(existing);
            }
        }
        Ok(Manifest {
            config_sha256: config_sha256.to_string(),
            seed,
            artifacts: BTreeMap::new(),
        })
    }

    /// Writes `bytes` to `out/relative` and records its hash.
    pub fn write_artifact(&mut self, out: &Path, relative: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = out.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.artifacts.insert(relative.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, out: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(out)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(out.join(Self::FILE), text)?;
        Ok(())
    }
}
