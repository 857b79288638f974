use std::fs;
use std::path::{Path, PathBuf};

use euda_core::trainer::FlatConfig;
use euda_core::{EudaError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A file referenced by a run, with the SHA-256 of its contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    /// Records the canonical path so the manifest can be checked from any directory.
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: fs::canonicalize(path).map_err(|e| io_error(path, e))?,
            sha256: sha256_file(path)?,
        })
    }

    /// Recomputes the digest and compares it with the recorded one.
    pub fn verify(&self) -> Result<()> {
        let actual = sha256_file(&self.path)?;
        if actual != self.sha256 {
            return Err(EudaError::Consistency(format!(
                "{} changed since the run: sha256 {actual}, manifest says {}",
                self.path.display(),
                self.sha256
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datasets {
    pub source: FileDigest,
    pub target: FileDigest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: FileDigest,
    pub metrics: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periodic_checkpoints: Vec<PathBuf>,
}

/// Everything needed to reproduce or audit a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub config: FlatConfig,
    pub datasets: Datasets,
    pub artifacts: Artifacts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_target_accuracy: Option<f64>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| io_error(path, e))
    }

    /// Reads a manifest and checks every recorded digest against the files on disk.
    pub fn load_verified(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| EudaError::Format(format!("{}: {e}", path.display())))?;
        manifest.datasets.source.verify()?;
        manifest.datasets.target.verify()?;
        manifest.artifacts.checkpoint.verify()?;
        Ok(manifest)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn io_error(path: &Path, source: std::io::Error) -> EudaError {
    EudaError::Io {
        path: path.display().to_string(),
        source,
    }
}
