//! Run manifests.
//!
//! The manifest hash covers everything that determines a run's results: the
//! command, the resolved configuration, the dataset and test-split hashes,
//! the seeds and the tool version. The output directory and config path are
//! recorded but not hashed, so the same run in another directory cites the
//! same manifest.

use std::path::{Path, PathBuf};

use pact_core::hash::sha256_hex;
use pact_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// The hashed part of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunIdentity {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub dataset_hash: String,
    pub split_hash: String,
    pub seeds: Vec<u64>,
}

impl RunIdentity {
    pub fn hash(&self) -> Result<String> {
        // serde_json::Value keeps object keys sorted, so this is canonical.
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub hash: String,
    #[serde(flatten)]
    pub identity: RunIdentity,
    pub config_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn new(identity: RunIdentity, config_path: Option<&Path>, output_dir: &Path) -> Result<Self> {
        Ok(RunManifest {
            hash: identity.hash()?,
            identity,
            config_path: config_path.map(Path::to_path_buf),
            output_dir: output_dir.to_path_buf(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity() -> RunIdentity {
        RunIdentity {
            tool_version: "0.1.0".into(),
            command: "benchmark".into(),
            config: serde_json::json!({"b": 1, "a": [1.5, 2]}),
            dataset_hash: "d".into(),
            split_hash: "s".into(),
            seeds: vec![0, 1],
        }
    }

    #[test]
    fn hash_ignores_location() {
        let a = RunManifest::new(identity(), None, Path::new("x")).unwrap();
        let b = RunManifest::new(identity(), Some(Path::new("c.json")), Path::new("y")).unwrap();
        assert_eq!(a.hash, b.hash);
        let mut other = identity();
        other.seeds.push(2);
        assert_ne!(a.hash, other.hash().unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(identity(), None, dir.path()).unwrap();
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.identity.hash().unwrap(), m.hash);
    }
}
