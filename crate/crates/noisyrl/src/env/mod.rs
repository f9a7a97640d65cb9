//! Procedural tool-use environments.
//!
//! A [`DomainGraph`] declares entity schemas, tool APIs and the dependency
//! edges between them. [`synthesize_task`] samples a grounded tool chain from
//! the graph, populates a [`Database`], and derives a verifiable
//! [`TaskSpec`]: the target database state after replaying the chain plus the
//! reads that must be observed along the way. [`EnvState`] then executes the
//! resulting POMDP: tool calls hit the database, the scripted user reveals
//! goal slots turn by turn, and [`verify`] scores the episode 0/1 by exact
//! final-state comparison.

mod domain;
mod fixture;
mod sim;
mod task;
mod types;

pub use domain::{build_domain, DomainError, DomainSize};
pub use fixture::{
    load_fixture, save_fixture, Fixture, FixtureError, TaskEntry, FIXTURE_SCHEMA_VERSION,
};
pub use sim::{
    enumerate_actions, step, step_noisy, user_turn, verify, EnvState, HistoryEvent, NoiseFlags,
    StepError, MAX_GROUNDINGS_PER_TOOL,
};
pub use task::{
    replay_chain, synthesize_task, GroundedCall, InteractionScript, ScriptSegment, TaskSpec,
    UserTurnSpec,
};
pub use types::{
    Action, Database, DomainGraph, EntitySchema, FieldDef, FieldKey, ObsValue, Observation, Record,
    ToolEffect, ToolResult, ToolSpec, ToolStatus, Value, WriteValue,
};
