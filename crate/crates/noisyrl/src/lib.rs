//! Noise-aware agentic reinforcement learning at desk scale.
//!
//! The crate trains a small featurized softmax policy to operate procedurally
//! generated tool-use environments in which both the simulated user and the
//! tools misbehave. The moving parts:
//!
//! - [`env`] — procedural domain graphs, verifiable task synthesis, and the
//!   tool-grounded simulator with a scripted user and an exact-state verifier.
//! - [`noise`] — user-side script perturbation and tool-side result
//!   perturbation, parameterized by a difficulty level, fully replayable.
//! - [`oracle`] — a breadth-first solvability oracle that proves every
//!   injected perturbation leaves the task solvable.
//! - [`policy`] — linear softmax policy over enumerated candidate actions,
//!   with exact log-probabilities, analytic gradients, and Adam.
//! - [`rollout`] — episode execution and hybrid rollout groups mixing clean
//!   and noisy environments per task.
//! - [`optim`] — group-wise advantage normalization over clean/noisy subsets,
//!   clipped importance-weighted surrogate, and the policy update.
//! - [`scheduler`] — the adaptive noise curriculum driven by the clean-vs-noisy
//!   success gap.
//! - [`metrics`] — Avg@k / Pass@k, robustness gaps, and interaction counters.
//! - [`exp`] — declarative experiment configs, the train/eval/inject/report
//!   pipeline, and artifact persistence.
//!
//! See the crate examples for runnable walkthroughs of each capability, and
//! the `noisyrl` binary for the subcommand CLI.

pub mod env;
pub mod exp;
pub mod metrics;
pub mod noise;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod rollout;
pub mod scheduler;
pub mod seeding;

pub use env::{
    Action, Database, DomainGraph, DomainSize, EnvState, Observation, TaskSpec, ToolSpec, Value,
};
pub use noise::{NoiseCategory, NoiseRealization, NoiseSide, NoiseSpec};
pub use policy::{FeatureLayout, OptimizerState, PolicyParams};
pub use rollout::{RolloutGroup, Trajectory};
pub use scheduler::SchedulerState;
