//! Artifact provenance and output-directory locking.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use exgen_core::config::RunConfig;

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Meta {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(Meta {
            config_hash: config.hash()?,
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

/// Write `value` wrapped with provenance as `{ "meta": ..., "data": ... }`.
pub fn write_artifact<T: Serialize>(path: impl AsRef<Path>, meta: &Meta, value: &T) -> Result<()> {
    let path = path.as_ref();
    let doc = serde_json::json!({ "meta": meta, "data": value });
    fs::write(path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Exclusive lock on an output directory; the lockfile is removed on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(".exgen.lock");
        if path.exists() {
            bail!(
                "output directory {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            );
        }
        fs::write(&path, std::process::id().to_string())?;
        Ok(DirLock { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
