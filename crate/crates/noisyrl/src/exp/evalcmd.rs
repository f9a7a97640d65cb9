//! Evaluation: k greedy runs per task per setting, with run-indexed
//! environment seeds supplying the across-run variation in noisy settings.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{build_domain, Database, DomainGraph, TaskSpec};
use crate::exp::train::{synthesize_tasks, TrainError};
use crate::exp::ExperimentConfig;
use crate::metrics::{interaction_stats, robustness_report, EvalRecord, MetricsReport};
use crate::noise::{NoiseCategory, NoiseSpec};
use crate::policy::{FeatureLayout, PolicyParams};
use crate::rollout::{run_episode, Trajectory};
use crate::seeding::{derive_seed, tags};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: MetricsReport,
}

/// Evaluates a policy on the config's eval task set: the ideal setting plus
/// every noise category at the configured level. Episodes run greedily
/// (temperature 0).
pub fn run_eval(
    config: &ExperimentConfig,
    params: &PolicyParams,
    eval_seed: u64,
) -> Result<EvalOutcome, TrainError> {
    let domain = build_domain(config.domain.into(), config.seed)?;
    let layout = FeatureLayout::for_domain(&domain);
    if params.dim() != layout.dim() {
        return Err(TrainError::Optim(crate::optim::OptimError::Policy(
            crate::policy::PolicyError::DimensionMismatch {
                params: params.dim(),
                input: layout.dim(),
            },
        )));
    }
    let tasks = synthesize_tasks(&domain, config, 2, config.tasks.eval)?;

    let (ideal_records, ideal_trajs) =
        eval_setting(config, params, &layout, &domain, &tasks, None, eval_seed);
    let mut noisy = BTreeMap::new();
    let mut noisy_trajs: Vec<Trajectory> = Vec::new();
    for category in NoiseCategory::ALL {
        let spec = NoiseSpec::new(category, config.eval.noise_level);
        let (records, trajs) = eval_setting(
            config,
            params,
            &layout,
            &domain,
            &tasks,
            Some(spec),
            eval_seed,
        );
        noisy.insert(category, records);
        noisy_trajs.extend(trajs);
    }

    let mut report = robustness_report(&ideal_records, &noisy)
        .expect("settings share the task set by construction");
    let mut interaction = BTreeMap::new();
    interaction.insert("ideal".to_string(), interaction_stats(&ideal_trajs));
    interaction.insert("noisy".to_string(), interaction_stats(&noisy_trajs));
    report.interaction = Some(interaction);
    Ok(EvalOutcome { report })
}

fn eval_setting(
    config: &ExperimentConfig,
    params: &PolicyParams,
    layout: &FeatureLayout,
    domain: &DomainGraph,
    tasks: &[(TaskSpec, Database)],
    noise: Option<NoiseSpec>,
    eval_seed: u64,
) -> (Vec<EvalRecord>, Vec<Trajectory>) {
    let setting_tag = noise.map(|s| s.category as u64 + 1).unwrap_or(0);
    let jobs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|t| (0..config.eval.k).map(move |r| (t, r)))
        .collect();
    let trajectories: Vec<(usize, Trajectory)> = jobs
        .par_iter()
        .map(|&(t, r)| {
            let (task, db) = &tasks[t];
            let seed = derive_seed(eval_seed, &[tags::EVAL, setting_tag, t as u64, r as u64]);
            let trajectory = run_episode(
                params,
                layout,
                domain,
                task,
                db,
                noise,
                task.default_turn_budget(),
                0.0,
                seed,
            )
            .expect("eval episode runs");
            (t, trajectory)
        })
        .collect();

    let mut records: Vec<EvalRecord> = tasks
        .iter()
        .map(|(task, _)| EvalRecord {
            task_id: task.task_id.clone(),
            rewards: Vec::with_capacity(config.eval.k),
        })
        .collect();
    let mut all = Vec::with_capacity(trajectories.len());
    for (t, trajectory) in trajectories {
        records[t].rewards.push(trajectory.reward);
        all.push(trajectory);
    }
    (records, all)
}
