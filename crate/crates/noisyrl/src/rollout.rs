//! Episode execution and hybrid rollout groups.
//!
//! The episode protocol: the user speaks first, and one pending scripted turn
//! is delivered before each agent decision; the agent then acts and the
//! environment replies. User-side noise rewrites the script before the
//! episode starts; tool-side noise perturbs ok results as they stream by.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    enumerate_actions, step_noisy, user_turn, verify, Action, Database, DomainGraph, EnvState,
    Observation, StepError, TaskSpec,
};
use crate::noise::{
    perturb_interaction, NoiseCategory, NoiseError, NoiseRealization, NoiseSide, NoiseSpec,
    NoiseStream,
};
use crate::policy::{
    action_logprobs, featurize, sample_action, FeatureLayout, FeatureVector, PolicyParams,
    TaskContext,
};
use crate::seeding::{self, derive_seed, tags};

/// One decision point: what was observed, which candidates were available,
/// what was chosen, and the behavior policy's temperature-1 log-probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub observation: Observation,
    pub candidates: Vec<(Action, FeatureVector)>,
    pub chosen: usize,
    pub logprob: f64,
}

/// Which perturbation (if any) an episode ran under.
pub type NoiseTag = Option<(NoiseCategory, u32)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<StepRecord>,
    pub reward: u8,
    pub noise_tag: NoiseTag,
    pub realization: Option<NoiseRealization>,
    /// Interaction counters: tool calls, ask-user turns.
    pub tool_calls: usize,
    pub ask_turns: usize,
}

impl Trajectory {
    /// Trajectory length L: the number of agent decisions.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("step {step} failed: {source}; action log: {log}")]
    Step {
        step: usize,
        source: StepError,
        log: String,
    },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Runs one episode. `episode_seed` derives both the sampling stream and the
/// noise realization seed, so a trajectory replays exactly from
/// `(policy, task, noise, max_turns, temperature, episode_seed)`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    policy: &PolicyParams,
    layout: &FeatureLayout,
    domain: &DomainGraph,
    task: &TaskSpec,
    initial_db: &Database,
    noise: Option<NoiseSpec>,
    max_turns: usize,
    temperature: f64,
    episode_seed: u64,
) -> Result<Trajectory, EpisodeError> {
    assert!(max_turns >= 1);
    let mut rng = seeding::rng_for(episode_seed, &[tags::EPISODE, 0]);
    let noise_seed = derive_seed(episode_seed, &[tags::EPISODE, 1]);

    // user-side noise rewrites the script before anything runs
    let (script, mut realization, mut tool_stream) = match noise {
        Some(spec) if spec.side() == NoiseSide::User => {
            let spec = clamp_user_level(spec, task);
            let (script, realization) = perturb_interaction(
                &task.interaction_script,
                spec,
                noise_seed,
                domain,
                initial_db,
            )?;
            (script, Some(realization), None)
        }
        Some(spec) => (
            task.interaction_script.clone(),
            None,
            Some(NoiseStream::new(spec, noise_seed, domain, initial_db)),
        ),
        None => (task.interaction_script.clone(), None, None),
    };

    let mut env = EnvState::new(initial_db.clone(), script);
    let ctx = TaskContext::from_task(task, max_turns);
    let mut steps: Vec<StepRecord> = Vec::new();

    for turn in 0..max_turns {
        user_turn(&mut env);
        let observation = env
            .last_observation()
            .cloned()
            .unwrap_or(Observation::Silence);
        let actions = enumerate_actions(&env, domain);
        let candidates: Vec<(Action, FeatureVector)> = actions
            .into_iter()
            .map(|a| {
                let x = featurize(layout, domain, &env, &ctx, &a);
                (a, x)
            })
            .collect();
        let features: Vec<FeatureVector> = candidates.iter().map(|(_, x)| x.clone()).collect();
        let logprobs = action_logprobs(policy, &features);
        let (chosen, logprob) = sample_action(&logprobs, temperature, &mut rng);
        let action = candidates[chosen].0.clone();
        step_noisy(&mut env, domain, action, tool_stream.as_mut()).map_err(|source| {
            EpisodeError::Step {
                step: turn,
                source,
                log: format!(
                    "{:?}",
                    steps
                        .iter()
                        .map(|s| s.candidates[s.chosen].0.to_string())
                        .collect::<Vec<_>>()
                ),
            }
        })?;
        steps.push(StepRecord {
            observation,
            candidates,
            chosen,
            logprob,
        });
        if env.terminated {
            break;
        }
    }

    if let Some(stream) = tool_stream.take() {
        realization = Some(stream.into_realization());
    }
    let reward = verify(&env, task);
    let tool_calls = steps
        .iter()
        .filter(|s| matches!(s.candidates[s.chosen].0, Action::ToolCall { .. }))
        .count();
    let ask_turns = steps
        .iter()
        .filter(|s| matches!(s.candidates[s.chosen].0, Action::AskUser { .. }))
        .count();
    Ok(Trajectory {
        task_id: task.task_id.clone(),
        steps,
        reward,
        noise_tag: noise.map(|s| (s.category, s.level)),
        realization,
        tool_calls,
        ask_turns,
    })
}

/// Ambiguous/inconsistent anomaly counts cannot exceed the slots the script
/// actually reveals; the effective level is clamped to the task's capacity.
pub fn clamp_user_level(spec: NoiseSpec, task: &TaskSpec) -> NoiseSpec {
    match spec.category {
        NoiseCategory::Ambiguous | NoiseCategory::Inconsistent => NoiseSpec {
            category: spec.category,
            level: spec.level.min(task.goal_slots.len() as u32),
        },
        _ => spec,
    }
}

/// Per-category noisy-episode allocation for one group: (category, level,
/// count) entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseAllocation {
    pub entries: Vec<(NoiseCategory, u32, usize)>,
}

impl NoiseAllocation {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, _, n)| n).sum()
    }
}

/// The N trajectories for one task, partitioned into the clean subset and
/// per-category noisy subsets. Construction asserts the partition is exact
/// and the noisy share never exceeds half the group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
    pub clean_indices: Vec<usize>,
    pub noisy_indices: BTreeMap<NoiseCategory, Vec<usize>>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn noisy_count(&self) -> usize {
        self.noisy_indices.values().map(|v| v.len()).sum()
    }

    pub fn all_noisy_indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.noisy_indices.values().flatten().copied().collect();
        out.sort_unstable();
        out
    }

    pub fn rewards(&self) -> Vec<u8> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }

    fn assert_invariants(&self) {
        let mut seen = vec![false; self.trajectories.len()];
        for &i in self
            .clean_indices
            .iter()
            .chain(self.all_noisy_indices().iter())
        {
            assert!(!seen[i], "partition indices must be disjoint");
            seen[i] = true;
        }
        assert!(seen.iter().all(|s| *s), "partition must cover the group");
        assert!(
            2 * self.noisy_count() <= self.trajectories.len(),
            "noisy share exceeds the 50% cap"
        );
    }
}

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("allocation of {allocated} noisy rollouts exceeds the cap for N = {n}")]
    AllocationExceedsCap { allocated: usize, n: usize },
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

/// Runs N episodes for one task: `N - total(allocation)` clean plus the
/// allocated noisy ones, each on an independent environment clone. Episodes
/// run in parallel; per-episode seeds keep the result order-independent.
#[allow(clippy::too_many_arguments)]
pub fn run_group(
    policy: &PolicyParams,
    layout: &FeatureLayout,
    domain: &DomainGraph,
    task: &TaskSpec,
    initial_db: &Database,
    n: usize,
    allocation: &NoiseAllocation,
    max_turns: usize,
    temperature: f64,
    group_seed: u64,
) -> Result<RolloutGroup, GroupError> {
    let noisy_total = allocation.total();
    if 2 * noisy_total > n {
        return Err(GroupError::AllocationExceedsCap {
            allocated: noisy_total,
            n,
        });
    }

    let mut specs: Vec<Option<NoiseSpec>> = vec![None; n - noisy_total];
    for (category, level, count) in &allocation.entries {
        for _ in 0..*count {
            specs.push(Some(NoiseSpec::new(*category, *level)));
        }
    }

    let trajectories: Result<Vec<Trajectory>, EpisodeError> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            run_episode(
                policy,
                layout,
                domain,
                task,
                initial_db,
                *spec,
                max_turns,
                temperature,
                derive_seed(group_seed, &[i as u64]),
            )
        })
        .collect();
    let trajectories = trajectories?;

    let mut clean_indices = Vec::new();
    let mut noisy_indices: BTreeMap<NoiseCategory, Vec<usize>> = BTreeMap::new();
    for (i, spec) in specs.iter().enumerate() {
        match spec {
            None => clean_indices.push(i),
            Some(s) => noisy_indices.entry(s.category).or_default().push(i),
        }
    }
    let group = RolloutGroup {
        task_id: task.task_id.clone(),
        trajectories,
        clean_indices,
        noisy_indices,
    };
    group.assert_invariants();
    Ok(group)
}

/// Recomputes the log-probabilities of the recorded chosen actions under
/// (possibly newer) params, without re-running the environment.
pub fn replay_logprobs(params: &PolicyParams, trajectory: &Trajectory) -> Vec<f64> {
    trajectory
        .steps
        .iter()
        .map(|s| {
            let features: Vec<FeatureVector> =
                s.candidates.iter().map(|(_, x)| x.clone()).collect();
            action_logprobs(params, &features)[s.chosen]
        })
        .collect()
}

/// Slim per-trajectory view written to the JSONL log: enough for exact
/// replay (seeds and draw logs) and offline analysis, without the feature
/// matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryLogRecord {
    pub task_id: String,
    pub noise_tag: NoiseTag,
    pub realization: Option<NoiseRealization>,
    pub reward: u8,
    pub steps: Vec<LogStep>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogStep {
    pub action: Action,
    pub logprob: f64,
    pub n_candidates: usize,
    /// Observation class tag (full observations replay from the seeds).
    pub obs: String,
}

fn obs_tag(obs: &Observation) -> String {
    match obs {
        Observation::UserMessage { .. } => "user_msg".into(),
        Observation::ToolResult(r) if r.status.is_ok() => "tool_ok".into(),
        Observation::ToolResult(_) => "tool_err".into(),
        Observation::Silence => "silence".into(),
    }
}

impl TrajectoryLogRecord {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        TrajectoryLogRecord {
            task_id: t.task_id.clone(),
            noise_tag: t.noise_tag,
            realization: t.realization.clone(),
            reward: t.reward,
            steps: t
                .steps
                .iter()
                .map(|s| LogStep {
                    action: s.candidates[s.chosen].0.clone(),
                    logprob: s.logprob,
                    n_candidates: s.candidates.len(),
                    obs: obs_tag(&s.observation),
                })
                .collect(),
        }
    }

    pub fn to_jsonl_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}
