//! Run manifests: hashed pointers to every artifact a run produced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl ArtifactRef {
    pub fn capture(path: &Path) -> std::io::Result<ArtifactRef> {
        Ok(ArtifactRef {
            path: path.to_path_buf(),
            sha256: hash_file(path)?,
        })
    }

    pub fn verify(&self) -> std::io::Result<bool> {
        Ok(hash_file(&self.path)? == self.sha256)
    }
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn hash_str(s: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    format!("{:x}", hasher.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub variant: String,
    pub seed: u64,
    pub status: RunStatus,
    pub iterations_completed: usize,
    pub trajectories: Option<ArtifactRef>,
    pub diagnostics: Option<ArtifactRef>,
    pub scheduler_log: Option<ArtifactRef>,
    pub checkpoints: Vec<(usize, ArtifactRef)>,
    pub final_checkpoint: Option<ArtifactRef>,
    pub final_report: Option<ArtifactRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Aborted { at_iteration: usize, error: String },
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), json)
    }

    pub fn load(dir: &Path) -> std::io::Result<RunManifest> {
        let raw = std::fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Checks that every referenced artifact exists and matches its hash.
    pub fn verify_artifacts(&self) -> std::io::Result<Vec<String>> {
        let mut bad = Vec::new();
        let mut check = |a: &Option<ArtifactRef>| -> std::io::Result<()> {
            if let Some(r) = a {
                if !r.verify().unwrap_or(false) {
                    bad.push(r.path.display().to_string());
                }
            }
            Ok(())
        };
        check(&self.trajectories)?;
        check(&self.diagnostics)?;
        check(&self.scheduler_log)?;
        check(&self.final_checkpoint)?;
        check(&self.final_report)?;
        for (_, r) in &self.checkpoints {
            if !r.verify().unwrap_or(false) {
                bad.push(r.path.display().to_string());
            }
        }
        Ok(bad)
    }
}
