//! Checkpoint persistence: a versioned JSON dump of the weight vector with a
//! feature-dimension header and the update counter. Loading rejects
//! dimension mismatches against the expected layout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeatureLayout, OptimizerState, PolicyParams};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub feature_dim: usize,
    pub update_counter: u64,
    pub weights: Vec<f64>,
    /// Optimizer moments, carried so training can resume exactly.
    pub optimizer: Option<OptimizerState>,
    /// Curriculum state at checkpoint time (curriculum runs only).
    #[serde(default)]
    pub scheduler: Option<crate::scheduler::SchedulerState>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint schema {0}")]
    SchemaVersion(u32),
    #[error("feature dimension mismatch: checkpoint has {found}, domain expects {expected}")]
    DimensionMismatch { found: usize, expected: usize },
}

impl Checkpoint {
    pub fn from_params(params: &PolicyParams, optimizer: Option<&OptimizerState>) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            feature_dim: params.dim(),
            update_counter: params.version,
            weights: params.weights.clone(),
            optimizer: optimizer.cloned(),
            scheduler: None,
        }
    }

    pub fn with_scheduler(mut self, scheduler: &crate::scheduler::SchedulerState) -> Self {
        self.scheduler = Some(scheduler.clone());
        self
    }

    pub fn params(&self) -> PolicyParams {
        PolicyParams {
            weights: self.weights.clone(),
            version: self.update_counter,
        }
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let json = serde_json::to_string(checkpoint).expect("checkpoint serializes");
    std::fs::write(path, json).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(
    path: &Path,
    expected_layout: Option<&FeatureLayout>,
) -> Result<Checkpoint, CheckpointError> {
    let raw = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&raw).map_err(|source| CheckpointError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(CheckpointError::SchemaVersion(ckpt.schema_version));
    }
    if ckpt.feature_dim != ckpt.weights.len() {
        return Err(CheckpointError::DimensionMismatch {
            found: ckpt.weights.len(),
            expected: ckpt.feature_dim,
        });
    }
    if let Some(layout) = expected_layout {
        if ckpt.feature_dim != layout.dim() {
            return Err(CheckpointError::DimensionMismatch {
                found: ckpt.feature_dim,
                expected: layout.dim(),
            });
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let params = PolicyParams {
            weights: vec![0.1, -0.2, 0.3],
            version: 17,
        };
        let ckpt = Checkpoint::from_params(&params, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path, None).unwrap();
        assert_eq!(loaded.params(), params);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"schema_version":1,"feature_dim":5,"update_counter":0,"weights":[0.0],"optimizer":null}"#,
        )
        .unwrap();
        assert!(matches!(
            load_checkpoint(&path, None),
            Err(CheckpointError::DimensionMismatch {
                found: 1,
                expected: 5
            })
        ));
    }
}
