use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::write_file;
use super::Command;
use crate::error::Result;

/// Everything needed to re-run a command: the fully resolved arguments
/// (seed included) plus bookkeeping that does not affect results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Command,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

/// `out/report.json` → `out/report.manifest.json`.
pub fn manifest_path(primary_output: &Path) -> PathBuf {
    primary_output.with_extension("manifest.json")
}
