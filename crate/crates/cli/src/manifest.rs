//! Run manifests: every command records its resolved configuration, seeds and
//! paths before producing outputs, so a run can be reproduced bit-identically
//! at the data level.

use anyhow::{Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub timestamp_utc: String,
    /// Resolved, fully-expanded configuration for the run.
    pub config: serde_json::Value,
    pub seeds: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seeds: serde_json::Value,
        inputs: Vec<PathBuf>,
        out_dir: &Path,
    ) -> Self {
        RunManifest {
            tool: "idseg",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            timestamp_utc: chrono::Utc::now().to_rfc3339(),
            config,
            seeds,
            inputs,
            out_dir: out_dir.to_path_buf(),
        }
    }

    /// Writes `manifest.json` atomically (temp file + rename) into the output
    /// directory, creating it if needed. Call before producing any output.
    pub fn write(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join("manifest.json");
        let tmp = self.out_dir.join(".manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &path)
            .with_context(|| format!("renaming manifest into {}", path.display()))?;
        Ok(path)
    }
}

/// Verifies that every declared output exists; commands exit nonzero otherwise.
pub fn check_outputs(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        anyhow::ensure!(p.exists(), "declared output missing: {}", p.display());
    }
    Ok(())
}
