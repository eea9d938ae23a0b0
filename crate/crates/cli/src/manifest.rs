use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub command: String,
    pub started: String,
    pub finished: String,
}

/// Provenance of a run directory, rewritten after every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    /// Relative path → sha256 of every file a command read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path → sha256 of every file a command wrote.
    pub artifacts: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            stages: Vec::new(),
        }
    }

    /// Loads the run's manifest, or starts a new one.
    pub fn open(run_dir: &Path, config: &RunConfig) -> Result<Self> {
        let path = run_dir.join(RUN_MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config.clone()));
        }
        let mut m: RunManifest = serde_json::from_slice(&std::fs::read(&path)?)
            .with_context(|| format!("reading {}", path.display()))?;
        m.config = config.clone();
        Ok(m)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_atomic(&run_dir.join(RUN_MANIFEST_FILE), &serde_json::to_vec_pretty(self)?)
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Path relative to the run directory where possible.
pub fn relative(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Keeps the extension last so format detection by extension still works.
pub fn tmp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".tmp-{name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        write_atomic(&p, b"{}").unwrap();
        write_atomic(&p, b"[1]").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"[1]");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn hash_matches_known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(RunConfig::default());
        m.stages.push(StageRecord { command: "synth".into(), started: now(), finished: now() });
        m.artifacts.insert("corpus/manifest.csv".into(), "00".into());
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::open(dir.path(), &RunConfig::default()).unwrap(), m);
    }
}
