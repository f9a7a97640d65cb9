//! The training loop: hybrid rollouts, policy updates, scheduled probes, and
//! artifact persistence. Fully deterministic under a fixed config and seed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{build_domain, synthesize_task, Database, DomainError, DomainGraph, TaskSpec};
use crate::exp::manifest::{hash_str, ArtifactRef, RunManifest, RunStatus};
use crate::exp::ExperimentConfig;
use crate::noise::NoiseCategory;
use crate::optim::{update_policy, OptimError, UpdateDiagnostics};
use crate::policy::{save_checkpoint, Checkpoint, FeatureLayout, OptimizerState, PolicyParams};
use crate::rollout::{run_group, GroupError, NoiseAllocation, RolloutGroup, TrajectoryLogRecord};
use crate::scheduler::{allocate_noise, probe, schedule_step, SchedulerState};
use crate::seeding::{derive_seed, rng_for, tags};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("setup failed: {0}")]
    Setup(#[from] DomainError),
    #[error("rollout failed: {0}")]
    Rollout(#[from] GroupError),
    #[error("update failed: {0}")]
    Optim(#[from] OptimError),
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One diagnostics line per iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub clean_mean_reward: f64,
    pub noisy_mean_reward: Option<f64>,
    pub noisy_rollouts: usize,
    pub update: UpdateDiagnostics,
}

/// One scheduler line per evaluation window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchedulerLog {
    pub iteration: usize,
    pub probes: Vec<ProbeLog>,
    pub levels: BTreeMap<String, u32>,
    pub fractions: BTreeMap<String, f64>,
    pub total_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeLog {
    pub category: String,
    pub clean_rate: f64,
    pub noisy_rate: f64,
    pub delta: f64,
}

/// Synthesizes a task set with chain lengths cycling through the configured
/// range. `stream` separates train / probe / eval sets.
pub(crate) fn synthesize_tasks(
    domain: &DomainGraph,
    config: &ExperimentConfig,
    stream: u64,
    count: usize,
) -> Result<Vec<(TaskSpec, Database)>, DomainError> {
    let span = config.tasks.chain_max - config.tasks.chain_min + 1;
    (0..count)
        .map(|i| {
            let chain = config.tasks.chain_min + (i % span);
            let seed = derive_seed(config.seed, &[tags::TASK, stream, i as u64]);
            synthesize_task(domain, chain, seed)
        })
        .collect()
}

/// Runs the full training loop and persists trajectories, diagnostics,
/// scheduler logs, checkpoints, and the manifest into the run directory.
/// Any abort still writes a manifest naming the failed iteration, with the
/// partial artifacts left in place for inspection.
pub fn run_train(config: &ExperimentConfig) -> Result<RunManifest, TrainError> {
    let dir = config.resolved_output_dir();
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(&dir))?;
    let config_hash = hash_str(&serde_json::to_string(config).expect("config serializes"));

    let mut manifest = RunManifest {
        config_hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        variant: config.variant.name().to_string(),
        seed: config.seed,
        status: RunStatus::Complete,
        iterations_completed: 0,
        trajectories: None,
        diagnostics: None,
        scheduler_log: None,
        checkpoints: Vec::new(),
        final_checkpoint: None,
        final_report: None,
    };

    match train_loop(config, &dir, &mut manifest) {
        Ok(()) => {
            manifest.status = RunStatus::Complete;
        }
        Err(e) => {
            manifest.status = RunStatus::Aborted {
                at_iteration: manifest.iterations_completed,
                error: e.to_string(),
            };
            capture_artifacts(&dir, &mut manifest);
            manifest.save(&dir).map_err(io_err(&dir))?;
            return Err(e);
        }
    }
    capture_artifacts(&dir, &mut manifest);
    manifest.save(&dir).map_err(io_err(&dir))?;
    Ok(manifest)
}

fn capture_artifacts(dir: &Path, manifest: &mut RunManifest) {
    let capture = |name: &str| ArtifactRef::capture(&dir.join(name)).ok();
    manifest.trajectories = capture("trajectories.jsonl");
    manifest.diagnostics = capture("diagnostics.jsonl");
    manifest.scheduler_log = capture("scheduler.jsonl");
    manifest.final_checkpoint = capture("checkpoint_final.json");
    let mut checkpoints = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir.join("checkpoints")) {
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if let Some(iter) = stem.strip_prefix("iter_").and_then(|s| s.parse().ok()) {
                    if let Ok(artifact) = ArtifactRef::capture(&path) {
                        checkpoints.push((iter, artifact));
                    }
                }
            }
        }
    }
    manifest.checkpoints = checkpoints;
}

fn train_loop(
    config: &ExperimentConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), TrainError> {
    let domain = build_domain(config.domain.into(), config.seed)?;
    let layout = FeatureLayout::for_domain(&domain);
    let train_tasks = synthesize_tasks(&domain, config, 0, config.tasks.train)?;
    let probe_tasks = synthesize_tasks(&domain, config, 1, config.tasks.probe)?;

    let mut params = PolicyParams::random_init(
        layout.dim(),
        config.init_scale,
        &mut rng_for(config.seed, &[tags::INIT]),
    );
    let mut optimizer = OptimizerState::new(layout.dim(), config.optimizer.into());
    let mut scheduler = SchedulerState::new(
        config.scheduler.theta,
        config.scheduler.fraction_step,
        config.scheduler.rho_max,
        config.scheduler.window,
    );
    let objective = config.objective_config();

    let traj_path = dir.join("trajectories.jsonl");
    let diag_path = dir.join("diagnostics.jsonl");
    let sched_path = dir.join("scheduler.jsonl");
    let mut traj_log =
        std::io::BufWriter::new(std::fs::File::create(&traj_path).map_err(io_err(&traj_path))?);
    let mut diag_log =
        std::io::BufWriter::new(std::fs::File::create(&diag_path).map_err(io_err(&diag_path))?);
    let mut sched_log =
        std::io::BufWriter::new(std::fs::File::create(&sched_path).map_err(io_err(&sched_path))?);

    for iteration in 0..config.rollout.iterations {
        let allocation = if config.variant.is_curriculum() {
            allocate_noise(&scheduler, config.rollout.n_per_task)
        } else {
            NoiseAllocation::default()
        };

        let mut groups: Vec<RolloutGroup> = Vec::with_capacity(config.rollout.batch_size);
        for j in 0..config.rollout.batch_size {
            let task_index = (iteration * config.rollout.batch_size + j) % train_tasks.len();
            let (task, db) = &train_tasks[task_index];
            let group = run_group(
                &params,
                &layout,
                &domain,
                task,
                db,
                config.rollout.n_per_task,
                &allocation,
                task.default_turn_budget(),
                config.rollout.temperature,
                derive_seed(config.seed, &[tags::EPISODE, iteration as u64, j as u64]),
            )?;
            for t in &group.trajectories {
                writeln!(
                    traj_log,
                    "{}",
                    TrajectoryLogRecord::from_trajectory(t).to_jsonl_line()
                )
                .map_err(io_err(&traj_path))?;
            }
            groups.push(group);
        }

        let (clean_mean, noisy_mean, noisy_rollouts) = batch_reward_stats(&groups);
        let (next_params, next_optimizer, update) =
            update_policy(groups, &params, &optimizer, &objective)?;
        params = next_params;
        optimizer = next_optimizer;

        let line = IterationLog {
            iteration,
            clean_mean_reward: clean_mean,
            noisy_mean_reward: noisy_mean,
            noisy_rollouts,
            update,
        };
        writeln!(diag_log, "{}", serde_json::to_string(&line).unwrap())
            .map_err(io_err(&diag_path))?;

        if (iteration + 1) % config.scheduler.window == 0 {
            if config.variant.is_curriculum() {
                let mut probes = Vec::new();
                let mut deltas = BTreeMap::new();
                for category in NoiseCategory::ALL {
                    let result = probe(
                        &params,
                        &layout,
                        &domain,
                        &probe_tasks,
                        &scheduler,
                        category,
                        config.rollout.probe_rollouts,
                        derive_seed(config.seed, &[tags::PROBE, iteration as u64]),
                    );
                    deltas.insert(category, result.delta());
                    probes.push(ProbeLog {
                        category: category.name().to_string(),
                        clean_rate: result.clean_rate,
                        noisy_rate: result.noisy_rate,
                        delta: result.delta(),
                    });
                }
                scheduler = schedule_step(&scheduler, &deltas);
                let line = SchedulerLog {
                    iteration,
                    probes,
                    levels: scheduler
                        .categories
                        .iter()
                        .map(|(c, s)| (c.name().to_string(), s.level))
                        .collect(),
                    fractions: scheduler
                        .categories
                        .iter()
                        .map(|(c, s)| (c.name().to_string(), s.fraction))
                        .collect(),
                    total_fraction: scheduler.total_fraction(),
                };
                writeln!(sched_log, "{}", serde_json::to_string(&line).unwrap())
                    .map_err(io_err(&sched_path))?;
            }
            let ckpt_path = dir.join(format!("checkpoints/iter_{:04}.json", iteration + 1));
            let checkpoint = Checkpoint::from_params(&params, Some(&optimizer));
            let checkpoint = if config.variant.is_curriculum() {
                checkpoint.with_scheduler(&scheduler)
            } else {
                checkpoint
            };
            save_checkpoint(&ckpt_path, &checkpoint).map_err(|e| TrainError::Io {
                path: ckpt_path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            })?;
        }
        manifest.iterations_completed = iteration + 1;
    }

    traj_log.flush().map_err(io_err(&traj_path))?;
    diag_log.flush().map_err(io_err(&diag_path))?;
    sched_log.flush().map_err(io_err(&sched_path))?;

    let final_path = dir.join("checkpoint_final.json");
    let checkpoint = Checkpoint::from_params(&params, Some(&optimizer));
    let checkpoint = if config.variant.is_curriculum() {
        checkpoint.with_scheduler(&scheduler)
    } else {
        checkpoint
    };
    save_checkpoint(&final_path, &checkpoint).map_err(|e| TrainError::Io {
        path: final_path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    Ok(())
}

fn batch_reward_stats(groups: &[RolloutGroup]) -> (f64, Option<f64>, usize) {
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for group in groups {
        for &i in &group.clean_indices {
            clean.push(group.trajectories[i].reward as f64);
        }
        for i in group.all_noisy_indices() {
            noisy.push(group.trajectories[i].reward as f64);
        }
    }
    let clean_mean = clean.iter().sum::<f64>() / clean.len().max(1) as f64;
    let noisy_mean = if noisy.is_empty() {
        None
    } else {
        Some(noisy.iter().sum::<f64>() / noisy.len() as f64)
    };
    (clean_mean, noisy_mean, noisy.len())
}
