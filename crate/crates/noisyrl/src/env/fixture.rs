//! Versioned JSON fixtures for domains and tasks.
//!
//! Field ordering is deterministic (struct order plus sorted maps) so
//! fixtures diff cleanly across regenerations.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::domain::validate_domain;
use super::task::{replay_chain, TaskSpec};
use super::types::{Database, DomainGraph};

pub const FIXTURE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task: TaskSpec,
    pub initial_db: Database,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub schema_version: u32,
    pub domain: DomainGraph,
    pub tasks: Vec<TaskEntry>,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("invalid fixture: {0}")]
    Invalid(String),
}

pub fn save_fixture(path: &Path, fixture: &Fixture) -> Result<(), FixtureError> {
    let json = serde_json::to_string_pretty(fixture).expect("fixture serializes");
    std::fs::write(path, json).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_fixture(path: &Path) -> Result<Fixture, FixtureError> {
    let raw = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let fixture: Fixture = serde_json::from_str(&raw).map_err(|source| FixtureError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    if fixture.schema_version != FIXTURE_SCHEMA_VERSION {
        return Err(FixtureError::SchemaVersion {
            found: fixture.schema_version,
            expected: FIXTURE_SCHEMA_VERSION,
        });
    }
    validate_domain(&fixture.domain).map_err(FixtureError::Invalid)?;
    for entry in &fixture.tasks {
        let replayed = replay_chain(
            &entry.initial_db,
            &fixture.domain,
            &entry.task.reference_chain,
        )
        .map_err(FixtureError::Invalid)?;
        if replayed != entry.task.target_state {
            return Err(FixtureError::Invalid(format!(
                "task {}: reference chain does not reproduce the target state",
                entry.task.task_id
            )));
        }
    }
    Ok(fixture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::domain::{build_domain, DomainSize};
    use crate::env::task::synthesize_task;

    #[test]
    fn round_trips_and_validates() {
        let domain = build_domain(
            DomainSize {
                tools: 6,
                entity_kinds: 2,
                links: 1,
            },
            3,
        )
        .unwrap();
        let (task, db) = synthesize_task(&domain, 3, 5).unwrap();
        let fixture = Fixture {
            schema_version: FIXTURE_SCHEMA_VERSION,
            domain,
            tasks: vec![TaskEntry {
                task,
                initial_db: db,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        save_fixture(&path, &fixture).unwrap();
        let loaded = load_fixture(&path).unwrap();
        assert_eq!(loaded, fixture);

        // serialization is byte-stable
        save_fixture(&dir.path().join("again.json"), &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("again.json")).unwrap()
        );
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"schema_version":99,"domain":{"tools":[],"entity_schemas":[],"dependency_edges":[]},"tasks":[]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_fixture(&path),
            Err(FixtureError::SchemaVersion { found: 99, .. })
        ));
    }
}
