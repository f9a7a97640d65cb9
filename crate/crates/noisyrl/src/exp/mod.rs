//! Experiment orchestration: declarative configs, the training loop, the
//! evaluation protocol, offline noise preview, and report generation.

mod evalcmd;
mod inject;
mod manifest;
mod report;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::DomainSize;
use crate::optim::{AdvantageMode, Aggregation, ObjectiveConfig, RatioMode};
use crate::policy::AdamConfig;

pub use evalcmd::{run_eval, EvalOutcome};
pub use inject::{run_inject, InjectOutcome};
pub use manifest::{hash_file, ArtifactRef, RunManifest};
pub use report::{run_report, ReportFiles};
pub use train::{run_train, TrainError};

/// Environment variable overriding the output root; run directories are
/// created beneath it.
pub const OUTPUT_ROOT_ENV: &str = "NOISYRL_OUT";

/// Algorithm variants. The baselines train exclusively on clean rollouts;
/// the curriculum variant mixes in scheduled noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Grpo,
    Gspo,
    HybridCurriculum,
}

impl Variant {
    pub fn is_curriculum(self) -> bool {
        matches!(self, Variant::HybridCurriculum)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Grpo => "grpo",
            Variant::Gspo => "gspo",
            Variant::HybridCurriculum => "hybrid-curriculum",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub tools: usize,
    pub entity_kinds: usize,
    pub links: usize,
}

impl From<DomainSection> for DomainSize {
    fn from(s: DomainSection) -> Self {
        DomainSize {
            tools: s.tools,
            entity_kinds: s.entity_kinds,
            links: s.links,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TasksSection {
    pub train: usize,
    pub eval: usize,
    pub probe: usize,
    pub chain_min: usize,
    pub chain_max: usize,
}

impl Default for TasksSection {
    fn default() -> Self {
        TasksSection {
            train: 300,
            eval: 40,
            probe: 8,
            chain_min: 2,
            chain_max: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutSection {
    pub n_per_task: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub temperature: f64,
    /// Paired probe rollouts per probe task.
    pub probe_rollouts: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        RolloutSection {
            n_per_task: 16,
            batch_size: 8,
            iterations: 120,
            temperature: 1.0,
            probe_rollouts: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip_norm: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = AdamConfig::default();
        OptimizerSection {
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            grad_clip_norm: d.grad_clip_norm,
        }
    }
}

impl From<OptimizerSection> for AdamConfig {
    fn from(s: OptimizerSection) -> Self {
        AdamConfig {
            learning_rate: s.learning_rate,
            beta1: s.beta1,
            beta2: s.beta2,
            epsilon: s.epsilon,
            grad_clip_norm: s.grad_clip_norm,
        }
    }
}

/// Optional objective overrides; unset fields fall back to the variant's
/// defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub clip_lo: Option<f64>,
    pub clip_hi: Option<f64>,
    pub ratio_mode: Option<RatioMode>,
    pub aggregation: Option<Aggregation>,
    pub clip_ratio_cap: Option<f64>,
    pub ppo_epochs: Option<usize>,
    pub reuse_epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub theta: f64,
    pub fraction_step: f64,
    pub rho_max: f64,
    pub window: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            theta: 0.05,
            fraction_step: 1.0 / 16.0,
            rho_max: 0.5,
            window: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k: usize,
    /// Difficulty level used for every noisy evaluation category.
    pub noise_level: u32,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 4,
            noise_level: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub domain: DomainSection,
    #[serde(default)]
    pub tasks: TasksSection,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub eval: EvalSection,
    /// Scale of the random weight initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    0.05
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config invariant violated: {0}")]
    Invariant(String),
}

impl ExperimentConfig {
    /// The concrete objective for this run: variant defaults plus overrides.
    pub fn objective_config(&self) -> ObjectiveConfig {
        let mut base = match self.variant {
            Variant::Grpo => ObjectiveConfig::grpo_baseline(),
            Variant::Gspo => ObjectiveConfig::gspo_baseline(),
            Variant::HybridCurriculum => ObjectiveConfig::hybrid_default(),
        };
        debug_assert_eq!(
            base.advantage_mode,
            if self.variant.is_curriculum() {
                AdvantageMode::Grouped
            } else {
                AdvantageMode::Pooled
            }
        );
        let o = &self.objective;
        if let Some(v) = o.clip_lo {
            base.clip_lo = v;
        }
        if let Some(v) = o.clip_hi {
            base.clip_hi = v;
        }
        if let Some(v) = o.ratio_mode {
            base.ratio_mode = v;
        }
        if let Some(v) = o.aggregation {
            base.aggregation = v;
        }
        if let Some(v) = o.clip_ratio_cap {
            base.clip_ratio_cap = v;
        }
        if let Some(v) = o.ppo_epochs {
            base.ppo_epochs = v;
        }
        if let Some(v) = o.reuse_epochs {
            base.reuse_epochs = v;
        }
        base
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scheduler.rho_max > 0.5 {
            return Err(ConfigError::Invariant(format!(
                "scheduler.rho_max = {} exceeds the 0.5 cap on noisy rollouts",
                self.scheduler.rho_max
            )));
        }
        if self.tasks.chain_min < 2
            || self.tasks.chain_max > 5
            || self.tasks.chain_min > self.tasks.chain_max
        {
            return Err(ConfigError::Invariant(format!(
                "chain lengths must satisfy 2 <= min <= max <= 5, got [{}, {}]",
                self.tasks.chain_min, self.tasks.chain_max
            )));
        }
        if self.rollout.n_per_task < 2
            || self.rollout.batch_size == 0
            || self.rollout.iterations == 0
        {
            return Err(ConfigError::Invariant(
                "rollout section needs n_per_task >= 2, batch_size >= 1, iterations >= 1".into(),
            ));
        }
        if self.tasks.train == 0 || self.tasks.probe < 4 {
            return Err(ConfigError::Invariant(
                "tasks section needs train >= 1 and probe >= 4".into(),
            ));
        }
        self.objective_config()
            .validate()
            .map_err(|e| ConfigError::Invariant(e.to_string()))?;
        Ok(())
    }

    /// The run directory: `output_dir` beneath the `NOISYRL_OUT` root when
    /// that variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !self.output_dir.is_absolute() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

/// Parses and validates a config file. Unknown keys are rejected with the
/// offending key named; invariant violations name the field.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config: ExperimentConfig = toml::from_str(&raw).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
variant = "hybrid-curriculum"
seed = 42
output_dir = "runs/demo"

[domain]
tools = 9
entity_kinds = 3
links = 2
"#;

    #[test]
    fn minimal_config_gets_full_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let config = load_config(&path).unwrap();
        assert_eq!(config.rollout.n_per_task, 16);
        assert_eq!(config.scheduler.theta, 0.05);
        assert_eq!(config.eval.k, 4);
        let objective = config.objective_config();
        assert_eq!(objective.clip_lo, 0.2);
        assert_eq!(objective.clip_hi, 0.28);
        assert_eq!(objective.advantage_mode, AdvantageMode::Grouped);
    }

    #[test]
    fn rho_max_above_cap_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, format!("{MINIMAL}\n[scheduler]\nrho_max = 0.7\n")).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("0.5 cap"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, format!("{MINIMAL}\nlearning_rae = 0.1\n")).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("learning_rae"), "{err}");
    }

    #[test]
    fn baseline_variants_use_pooled_advantages() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, MINIMAL.replace("hybrid-curriculum", "grpo")).unwrap();
        let config = load_config(&path).unwrap();
        let objective = config.objective_config();
        assert_eq!(objective.advantage_mode, AdvantageMode::Pooled);
        assert_eq!(objective.ratio_mode, RatioMode::PerStep);
        assert_eq!(objective.clip_hi, 0.2);
        assert_eq!(objective.clip_ratio_cap, 10.0);
    }
}
