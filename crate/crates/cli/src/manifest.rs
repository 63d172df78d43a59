use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_snapshot: BTreeMap<String, String>,
    pub dataset_name: String,
    pub seed: u64,
    /// RFC 3339, UTC.
    pub started_at: String,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str, config_snapshot: BTreeMap<String, String>, dataset_name: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_snapshot,
            dataset_name: dataset_name.to_string(),
            seed,
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            outputs: Vec::new(),
        }
    }

    /// Writes `manifest.json` into `dir` after checking that every listed
    /// output exists there.
    pub fn finish(&self, dir: &Path) -> Result<PathBuf> {
        for out in &self.outputs {
            let p = dir.join(out);
            if !p.exists() {
                return Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "listed output missing")));
            }
        }
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}
