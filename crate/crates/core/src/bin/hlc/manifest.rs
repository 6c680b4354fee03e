//! Run manifests: what a command read, wrote and with which settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hlc_core::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Working directory the relative paths refer to.
    pub cwd: PathBuf,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputRecord>,
    pub seed: u64,
    pub version: String,
    pub wall_clock_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `<primary>.manifest.json`.
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

impl RunManifest {
    pub fn record_outputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        self.outputs = paths
            .iter()
            .map(|p| {
                Ok(OutputRecord {
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        hlc_core::io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        hlc_core::io::read_json(path)
    }

}
