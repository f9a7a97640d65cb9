//! Group-relative policy optimization over hybrid rollout groups.
//!
//! Advantages are reward z-scores computed separately within the clean subset
//! and the pooled noisy subset of each group, then optimized jointly through
//! a clipped importance-weighted surrogate. With an empty noisy subset the
//! grouped path degenerates to plain group normalization, and the update is
//! bit-identical to the baseline path on the same rollouts.
//!
//! Ratios support two modes: per-step `exp(new_t − old_t)`, and a
//! sequence-level variant that applies the length-normalized geometric mean
//! ratio `exp(mean_t(new_t − old_t))` uniformly across the trajectory's
//! steps. Ratios are hard-capped before entering the surrogate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{
    action_logprobs, adam_update, logprob_gradient, FeatureVector, OptimizerState, PolicyError,
    PolicyParams,
};
use crate::rollout::{RolloutGroup, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    PerStep,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Flat mean over all steps in the batch.
    TokenMean,
    /// Mean over trajectories of per-trajectory step means.
    SeqMeanTokenMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Separate normalization for the clean and pooled-noisy subsets.
    Grouped,
    /// Plain normalization over the whole group.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub ratio_mode: RatioMode,
    pub aggregation: Aggregation,
    pub clip_ratio_cap: f64,
    pub advantage_mode: AdvantageMode,
    pub ppo_epochs: usize,
    pub reuse_epochs: usize,
}

impl ObjectiveConfig {
    /// The hybrid configuration: asymmetric clip, capped sequence ratios,
    /// sequence-mean aggregation, grouped advantages.
    pub fn hybrid_default() -> Self {
        ObjectiveConfig {
            clip_lo: 0.2,
            clip_hi: 0.28,
            ratio_mode: RatioMode::Sequence,
            aggregation: Aggregation::SeqMeanTokenMean,
            clip_ratio_cap: 3.0,
            advantage_mode: AdvantageMode::Grouped,
            ppo_epochs: 1,
            reuse_epochs: 2,
        }
    }

    /// Symmetric-clip per-step baseline with pooled advantages.
    pub fn grpo_baseline() -> Self {
        ObjectiveConfig {
            clip_lo: 0.2,
            clip_hi: 0.2,
            ratio_mode: RatioMode::PerStep,
            aggregation: Aggregation::TokenMean,
            clip_ratio_cap: 10.0,
            advantage_mode: AdvantageMode::Pooled,
            ppo_epochs: 1,
            reuse_epochs: 2,
        }
    }

    /// Sequence-ratio baseline with pooled advantages.
    pub fn gspo_baseline() -> Self {
        ObjectiveConfig {
            advantage_mode: AdvantageMode::Pooled,
            ..ObjectiveConfig::hybrid_default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.clip_lo > 0.0 && self.clip_lo < 1.0 && self.clip_hi > 0.0 && self.clip_hi < 1.0) {
            return Err(OptimError::BadConfig(format!(
                "clip range must lie in (0,1), got [{}, {}]",
                self.clip_lo, self.clip_hi
            )));
        }
        if self.clip_ratio_cap <= 1.0 {
            return Err(OptimError::BadConfig(format!(
                "clip ratio cap must exceed 1, got {}",
                self.clip_ratio_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("degenerate group: all rewards equal")]
    DegenerateGroup,
    #[error("non-finite ratio at step {step} (new {new}, stored {stored})")]
    NonFiniteRatio { step: usize, new: f64, stored: f64 },
    #[error("invalid objective config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Reward z-scores with the population standard deviation. All-equal input
/// is a degenerate group and must be filtered upstream.
pub fn normalize_advantages(rewards: &[f64]) -> Result<Vec<f64>, OptimError> {
    assert!(
        rewards.len() >= 2,
        "advantage groups need at least 2 members"
    );
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    if variance == 0.0 {
        return Err(OptimError::DegenerateGroup);
    }
    let std = variance.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetLabel {
    Clean,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub trajectory_index: usize,
    pub subset: SubsetLabel,
    pub advantage: f64,
}

/// Grouped advantages: the clean subset and the pooled noisy subset are
/// normalized independently; subsets that are degenerate or have fewer than
/// two members contribute no records. An empty result is legal.
pub fn groupwise_advantages(group: &RolloutGroup) -> Vec<AdvantageRecord> {
    let mut records = Vec::new();
    let rewards = group.rewards();
    for (subset, indices) in [
        (SubsetLabel::Clean, group.clean_indices.clone()),
        (SubsetLabel::Noise, group.all_noisy_indices()),
    ] {
        if indices.len() < 2 {
            continue;
        }
        let subset_rewards: Vec<f64> = indices.iter().map(|&i| rewards[i] as f64).collect();
        if let Ok(advantages) = normalize_advantages(&subset_rewards) {
            for (&i, a) in indices.iter().zip(advantages) {
                records.push(AdvantageRecord {
                    trajectory_index: i,
                    subset,
                    advantage: a,
                });
            }
        }
    }
    records
}

/// Plain group normalization over all N rollouts, the baseline path.
pub fn pooled_advantages(group: &RolloutGroup) -> Vec<AdvantageRecord> {
    let rewards: Vec<f64> = group.rewards().iter().map(|&r| r as f64).collect();
    if rewards.len() < 2 {
        return Vec::new();
    }
    match normalize_advantages(&rewards) {
        Ok(advantages) => advantages
            .into_iter()
            .enumerate()
            .map(|(i, a)| AdvantageRecord {
                trajectory_index: i,
                subset: SubsetLabel::Clean,
                advantage: a,
            })
            .collect(),
        Err(_) => Vec::new(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub retained: usize,
    pub all_pass: usize,
    pub all_fail: usize,
}

/// Drops groups whose rollouts all received the same reward; they carry no
/// gradient signal. All-pass and all-fail are counted separately.
pub fn filter_degenerate(groups: Vec<RolloutGroup>) -> (Vec<RolloutGroup>, FilterReport) {
    let mut report = FilterReport::default();
    let retained: Vec<RolloutGroup> = groups
        .into_iter()
        .filter(|g| {
            let rewards = g.rewards();
            let all_equal = rewards.windows(2).all(|w| w[0] == w[1]);
            if all_equal && !rewards.is_empty() {
                if rewards[0] == 1 {
                    report.all_pass += 1;
                } else {
                    report.all_fail += 1;
                }
                false
            } else {
                true
            }
        })
        .collect();
    report.retained = retained.len();
    (retained, report)
}

/// Per-step importance ratios, hard-capped at `cap` before the surrogate.
/// Sequence mode applies the length-normalized geometric mean uniformly.
pub fn importance_ratio(
    new_logprobs: &[f64],
    stored_logprobs: &[f64],
    mode: RatioMode,
    cap: f64,
) -> Result<Vec<f64>, OptimError> {
    assert_eq!(new_logprobs.len(), stored_logprobs.len());
    let ratios: Vec<f64> = match mode {
        RatioMode::PerStep => new_logprobs
            .iter()
            .zip(stored_logprobs)
            .map(|(n, s)| (n - s).exp().min(cap))
            .collect(),
        RatioMode::Sequence => {
            let len = new_logprobs.len().max(1) as f64;
            let mean_diff = new_logprobs
                .iter()
                .zip(stored_logprobs)
                .map(|(n, s)| n - s)
                .sum::<f64>()
                / len;
            let r = mean_diff.exp().min(cap);
            vec![r; new_logprobs.len()]
        }
    };
    for (step, r) in ratios.iter().enumerate() {
        if !r.is_finite() {
            return Err(OptimError::NonFiniteRatio {
                step,
                new: new_logprobs[step],
                stored: stored_logprobs[step],
            });
        }
    }
    Ok(ratios)
}

/// The clipped surrogate: `min(ratio·A, clamp(ratio, 1−lo, 1+hi)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_lo: f64, clip_hi: f64) -> f64 {
    debug_assert!(ratio > 0.0);
    let clamped = ratio.clamp(1.0 - clip_lo, 1.0 + clip_hi);
    (ratio * advantage).min(clamped * advantage)
}

/// Scalar objective from per-step values grouped by trajectory.
pub fn aggregate_loss(values_by_trajectory: &[Vec<f64>], aggregation: Aggregation) -> f64 {
    let non_empty: Vec<&Vec<f64>> = values_by_trajectory
        .iter()
        .filter(|v| !v.is_empty())
        .collect();
    if non_empty.is_empty() {
        return 0.0;
    }
    match aggregation {
        Aggregation::SeqMeanTokenMean => {
            let sum: f64 = non_empty
                .iter()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .sum();
            sum / non_empty.len() as f64
        }
        Aggregation::TokenMean => {
            let total: usize = non_empty.iter().map(|v| v.len()).sum();
            let sum: f64 = non_empty.iter().flat_map(|v| v.iter()).sum();
            sum / total as f64
        }
    }
}

/// One trajectory prepared for optimization: borrowed rollout data plus its
/// subset advantage.
struct PreparedItem<'a> {
    trajectory: &'a Trajectory,
    advantage: f64,
}

fn prepare_batch<'a>(
    groups: &'a [RolloutGroup],
    mode: AdvantageMode,
) -> (Vec<PreparedItem<'a>>, AdvantageStats) {
    let mut items = Vec::new();
    let mut stats = AdvantageStats::default();
    for group in groups {
        let records = match mode {
            AdvantageMode::Grouped => groupwise_advantages(group),
            AdvantageMode::Pooled => pooled_advantages(group),
        };
        for record in records {
            stats.push(record.subset, record.advantage);
            items.push(PreparedItem {
                trajectory: &group.trajectories[record.trajectory_index],
                advantage: record.advantage,
            });
        }
    }
    (items, stats)
}

/// Mean/extremes of subset advantages, for diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvantageStats {
    pub clean_count: usize,
    pub clean_mean: f64,
    pub noise_count: usize,
    pub noise_mean: f64,
}

impl AdvantageStats {
    fn push(&mut self, subset: SubsetLabel, advantage: f64) {
        match subset {
            SubsetLabel::Clean => {
                self.clean_mean = (self.clean_mean * self.clean_count as f64 + advantage)
                    / (self.clean_count + 1) as f64;
                self.clean_count += 1;
            }
            SubsetLabel::Noise => {
                self.noise_mean = (self.noise_mean * self.noise_count as f64 + advantage)
                    / (self.noise_count + 1) as f64;
                self.noise_count += 1;
            }
        }
    }
}

struct EpochEval {
    objective: f64,
    gradient: Vec<f64>,
    mean_ratio: f64,
    max_ratio: f64,
    clip_fraction: f64,
}

/// Evaluates the surrogate and its analytic gradient at `params`.
fn evaluate_epoch(
    params: &PolicyParams,
    items: &[PreparedItem<'_>],
    config: &ObjectiveConfig,
) -> Result<EpochEval, OptimError> {
    let dim = params.dim();
    let mut values_by_traj: Vec<Vec<f64>> = Vec::with_capacity(items.len());
    let mut grads_by_traj: Vec<Vec<Vec<f64>>> = Vec::with_capacity(items.len());
    let mut ratio_sum = 0.0;
    let mut ratio_count = 0usize;
    let mut max_ratio = 0.0f64;
    let mut clipped = 0usize;

    for item in items {
        let traj = item.trajectory;
        let a = item.advantage;
        if traj.steps.is_empty() {
            values_by_traj.push(Vec::new());
            grads_by_traj.push(Vec::new());
            continue;
        }
        let new_lps: Vec<f64> = traj
            .steps
            .iter()
            .map(|s| {
                let features: Vec<FeatureVector> =
                    s.candidates.iter().map(|(_, x)| x.clone()).collect();
                action_logprobs(params, &features)[s.chosen]
            })
            .collect();
        let stored: Vec<f64> = traj.steps.iter().map(|s| s.logprob).collect();
        let raw: Vec<f64> = match config.ratio_mode {
            RatioMode::PerStep => new_lps
                .iter()
                .zip(&stored)
                .map(|(n, s)| (n - s).exp())
                .collect(),
            RatioMode::Sequence => {
                let len = new_lps.len().max(1) as f64;
                let mean = new_lps.iter().zip(&stored).map(|(n, s)| n - s).sum::<f64>() / len;
                vec![mean.exp(); new_lps.len()]
            }
        };
        for (step, r) in raw.iter().enumerate() {
            if !r.is_finite() {
                return Err(OptimError::NonFiniteRatio {
                    step,
                    new: new_lps[step],
                    stored: stored[step],
                });
            }
        }

        let step_grads: Vec<Vec<f64>> = traj
            .steps
            .iter()
            .map(|s| {
                let features: Vec<FeatureVector> =
                    s.candidates.iter().map(|(_, x)| x.clone()).collect();
                logprob_gradient(params, &features, s.chosen)
            })
            .collect();

        let mut values = Vec::with_capacity(raw.len());
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
        match config.ratio_mode {
            RatioMode::PerStep => {
                for (t, &rho) in raw.iter().enumerate() {
                    let r = rho.min(config.clip_ratio_cap);
                    let value = clipped_surrogate(r, a, config.clip_lo, config.clip_hi);
                    values.push(value);
                    ratio_sum += r;
                    ratio_count += 1;
                    max_ratio = max_ratio.max(r);
                    let active =
                        surrogate_branch_active(r, a, config) && rho < config.clip_ratio_cap;
                    if !active {
                        clipped += 1;
                    }
                    let coef = if active { a * rho } else { 0.0 };
                    grads.push(step_grads[t].iter().map(|g| coef * g).collect());
                }
            }
            RatioMode::Sequence => {
                let rho = raw[0];
                let r = rho.min(config.clip_ratio_cap);
                let value = clipped_surrogate(r, a, config.clip_lo, config.clip_hi);
                ratio_sum += r;
                ratio_count += 1;
                max_ratio = max_ratio.max(r);
                let active = surrogate_branch_active(r, a, config) && rho < config.clip_ratio_cap;
                if !active {
                    clipped += 1;
                }
                let len = raw.len().max(1) as f64;
                // d r_seq / dw = r_seq * (1/L) Σ_t ∂logπ_t/∂w
                let mut gsum = vec![0.0; dim];
                for g in &step_grads {
                    for (acc, gi) in gsum.iter_mut().zip(g) {
                        *acc += gi / len;
                    }
                }
                let coef = if active { a * rho } else { 0.0 };
                let per_step_grad: Vec<f64> = gsum.iter().map(|g| coef * g).collect();
                for _ in 0..raw.len() {
                    values.push(value);
                    grads.push(per_step_grad.clone());
                }
            }
        }
        values_by_traj.push(values);
        grads_by_traj.push(grads);
    }

    let objective = aggregate_loss(&values_by_traj, config.aggregation);
    // matching aggregation weights for the gradient
    let mut gradient = vec![0.0; dim];
    let non_empty = values_by_traj
        .iter()
        .filter(|v| !v.is_empty())
        .count()
        .max(1);
    let total_steps: usize = values_by_traj.iter().map(|v| v.len()).sum::<usize>().max(1);
    for (values, grads) in values_by_traj.iter().zip(&grads_by_traj) {
        if values.is_empty() {
            continue;
        }
        let weight = match config.aggregation {
            Aggregation::SeqMeanTokenMean => 1.0 / (non_empty as f64 * values.len() as f64),
            Aggregation::TokenMean => 1.0 / total_steps as f64,
        };
        for g in grads {
            for (acc, gi) in gradient.iter_mut().zip(g) {
                *acc += weight * gi;
            }
        }
    }

    Ok(EpochEval {
        objective,
        gradient,
        mean_ratio: if ratio_count == 0 {
            1.0
        } else {
            ratio_sum / ratio_count as f64
        },
        max_ratio,
        clip_fraction: if ratio_count == 0 {
            0.0
        } else {
            clipped as f64 / ratio_count as f64
        },
    })
}

/// Whether the unclipped branch is the active one (gradient flows through
/// the ratio). Flat regions: A > 0 with the ratio above the upper clip, or
/// A < 0 with the ratio below the lower clip.
fn surrogate_branch_active(r: f64, advantage: f64, config: &ObjectiveConfig) -> bool {
    if advantage >= 0.0 {
        r <= 1.0 + config.clip_hi
    } else {
        r >= 1.0 - config.clip_lo
    }
}

/// Per-update diagnostics, one JSON record per iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub objective: f64,
    pub mean_ratio: f64,
    pub max_ratio: f64,
    pub clip_fraction: f64,
    pub advantage_stats: AdvantageStats,
    pub filter: FilterReport,
    pub epochs_run: usize,
    pub contributing_trajectories: usize,
}

/// The full update: filter degenerate groups, compute subset advantages,
/// then ascend the clipped surrogate for `ppo_epochs × reuse_epochs` Adam
/// steps against the stored behavior log-probabilities.
pub fn update_policy(
    groups: Vec<RolloutGroup>,
    params: &PolicyParams,
    optimizer: &OptimizerState,
    config: &ObjectiveConfig,
) -> Result<(PolicyParams, OptimizerState, UpdateDiagnostics), OptimError> {
    config.validate()?;
    let (retained, filter) = filter_degenerate(groups);
    let (items, advantage_stats) = prepare_batch(&retained, config.advantage_mode);

    let mut params = params.clone();
    let mut optimizer = optimizer.clone();
    let epochs = config.ppo_epochs * config.reuse_epochs;
    let mut last = EpochEval {
        objective: 0.0,
        gradient: vec![0.0; params.dim()],
        mean_ratio: 1.0,
        max_ratio: 1.0,
        clip_fraction: 0.0,
    };
    let mut epochs_run = 0;
    if !items.is_empty() {
        for _ in 0..epochs {
            last = evaluate_epoch(&params, &items, config)?;
            let (next_opt, next_params) = adam_update(&optimizer, &params, &last.gradient)?;
            optimizer = next_opt;
            params = next_params;
            epochs_run += 1;
        }
    }

    let diagnostics = UpdateDiagnostics {
        objective: last.objective,
        mean_ratio: last.mean_ratio,
        max_ratio: last.max_ratio,
        clip_fraction: last.clip_fraction,
        advantage_stats,
        filter,
        epochs_run,
        contributing_trajectories: items.len(),
    };
    Ok((params, optimizer, diagnostics))
}

/// Surrogate value at `params` for a prepared set of groups; the scalar the
/// analytic gradient is checked against by finite differences.
pub fn surrogate_objective(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    config: &ObjectiveConfig,
) -> Result<f64, OptimError> {
    let (items, _) = prepare_batch(groups, config.advantage_mode);
    if items.is_empty() {
        return Ok(0.0);
    }
    Ok(evaluate_epoch(params, &items, config)?.objective)
}

/// Analytic gradient of the surrogate at `params`.
pub fn surrogate_gradient(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    config: &ObjectiveConfig,
) -> Result<Vec<f64>, OptimError> {
    let (items, _) = prepare_batch(groups, config.advantage_mode);
    if items.is_empty() {
        return Ok(vec![0.0; params.dim()]);
    }
    Ok(evaluate_epoch(params, &items, config)?.gradient)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_matches_hand_values() {
        let a = normalize_advantages(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a, vec![1.0, -1.0, -1.0, 1.0]);

        let b = normalize_advantages(&[1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let expected = [1.2247, 1.2247, -0.8165, -0.8165, -0.8165];
        for (x, e) in b.iter().zip(expected) {
            assert!((x - e).abs() < 1e-4, "{x} vs {e}");
        }

        assert!(matches!(
            normalize_advantages(&[1.0, 1.0, 1.0, 1.0]),
            Err(OptimError::DegenerateGroup)
        ));
    }

    #[test]
    fn normalized_output_has_zero_mean_unit_std() {
        let a = normalize_advantages(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    fn group_with(clean: &[u8], noisy: &[u8]) -> RolloutGroup {
        use crate::noise::NoiseCategory;
        let mk = |reward: u8, tag: crate::rollout::NoiseTag| Trajectory {
            task_id: "t".into(),
            steps: Vec::new(),
            reward,
            noise_tag: tag,
            realization: tag.map(|(c, l)| {
                crate::noise::NoiseRealization::new(crate::noise::NoiseSpec::new(c, l), 0)
            }),
            tool_calls: 0,
            ask_turns: 0,
        };
        let mut trajectories = Vec::new();
        let mut clean_indices = Vec::new();
        let mut noisy_indices: std::collections::BTreeMap<NoiseCategory, Vec<usize>> =
            Default::default();
        for &r in clean {
            clean_indices.push(trajectories.len());
            trajectories.push(mk(r, None));
        }
        for &r in noisy {
            noisy_indices
                .entry(NoiseCategory::Failure)
                .or_default()
                .push(trajectories.len());
            trajectories.push(mk(r, Some((NoiseCategory::Failure, 1))));
        }
        RolloutGroup {
            task_id: "t".into(),
            trajectories,
            clean_indices,
            noisy_indices,
        }
    }

    #[test]
    fn groupwise_normalizes_each_subset() {
        let group = group_with(&[1, 0], &[1, 0]);
        let records = groupwise_advantages(&group);
        assert_eq!(records.len(), 4);
        for r in &records {
            assert!((r.advantage.abs() - 1.0).abs() < 1e-12);
        }
        assert_eq!(records[0].subset, SubsetLabel::Clean);
        assert_eq!(records[2].subset, SubsetLabel::Noise);
    }

    #[test]
    fn degenerate_clean_subset_contributes_nothing() {
        let group = group_with(&[1, 1], &[1, 0]);
        let records = groupwise_advantages(&group);
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r.subset == SubsetLabel::Noise));
    }

    #[test]
    fn zero_noise_fraction_reduces_to_pooled() {
        let group = group_with(&[1, 0, 0, 1], &[]);
        let grouped = groupwise_advantages(&group);
        let pooled = pooled_advantages(&group);
        assert_eq!(grouped.len(), pooled.len());
        for (g, p) in grouped.iter().zip(&pooled) {
            assert_eq!(g.trajectory_index, p.trajectory_index);
            assert_eq!(g.advantage.to_bits(), p.advantage.to_bits());
        }
    }

    #[test]
    fn filter_counts_all_pass_and_all_fail() {
        let groups = vec![
            group_with(&[1, 1, 1, 1], &[]),
            group_with(&[0, 0, 0, 0], &[]),
            group_with(&[1, 0, 1, 0], &[]),
        ];
        let (retained, report) = filter_degenerate(groups);
        assert_eq!(retained.len(), 1);
        assert_eq!(report.all_pass, 1);
        assert_eq!(report.all_fail, 1);
        assert_eq!(report.retained, 1);
    }

    #[test]
    fn filtering_is_scale_invariant_for_binary_rewards() {
        // all-equal stays all-equal under positive scaling; mixed stays mixed
        let mixed = group_with(&[1, 0, 1, 0], &[]);
        let equal = group_with(&[1, 1, 1, 1], &[]);
        let (_, r1) = filter_degenerate(vec![mixed]);
        let (_, r2) = filter_degenerate(vec![equal]);
        assert_eq!(r1.retained, 1);
        assert_eq!(r2.retained, 0);
    }

    #[test]
    fn ratio_identity_and_hand_values() {
        let same = importance_ratio(&[-1.0, -2.0], &[-1.0, -2.0], RatioMode::PerStep, 3.0).unwrap();
        assert_eq!(same, vec![1.0, 1.0]);
        let same_seq =
            importance_ratio(&[-1.0, -2.0], &[-1.0, -2.0], RatioMode::Sequence, 3.0).unwrap();
        assert_eq!(same_seq, vec![1.0, 1.0]);

        // diffs [ln 2, 0]
        let new = [-1.0 + 2.0f64.ln(), -2.0];
        let per = importance_ratio(&new, &[-1.0, -2.0], RatioMode::PerStep, 3.0).unwrap();
        assert!((per[0] - 2.0).abs() < 1e-12);
        assert!((per[1] - 1.0).abs() < 1e-12);
        let seq = importance_ratio(&new, &[-1.0, -2.0], RatioMode::Sequence, 3.0).unwrap();
        for r in seq {
            assert!((r - 2.0f64.sqrt()).abs() < 1e-12);
        }

        // a step diff of ln 10 caps at 3.0
        let capped =
            importance_ratio(&[-1.0 + 10.0f64.ln()], &[-1.0], RatioMode::PerStep, 3.0).unwrap();
        assert_eq!(capped, vec![3.0]);
    }

    #[test]
    fn surrogate_hand_values() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2, 0.28) - 1.28).abs() < 1e-12);
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2, 0.28), 0.7);
        assert!((clipped_surrogate(0.5, -1.0, 0.2, 0.28) - (-0.8)).abs() < 1e-12);
    }

    #[test]
    fn clip_flat_regions_have_zero_derivative_in_ratio() {
        let h = 1e-7;
        // A > 0, ratio above the upper clip
        let d_up = (clipped_surrogate(1.5 + h, 1.0, 0.2, 0.28)
            - clipped_surrogate(1.5 - h, 1.0, 0.2, 0.28))
            / (2.0 * h);
        assert!(d_up.abs() < 1e-9);
        // A < 0, ratio below the lower clip
        let d_dn = (clipped_surrogate(0.5 + h, -1.0, 0.2, 0.28)
            - clipped_surrogate(0.5 - h, -1.0, 0.2, 0.28))
            / (2.0 * h);
        assert!(d_dn.abs() < 1e-9);
        // interior region keeps slope A
        let d_mid = (clipped_surrogate(1.1 + h, 1.0, 0.2, 0.28)
            - clipped_surrogate(1.1 - h, 1.0, 0.2, 0.28))
            / (2.0 * h);
        assert!((d_mid - 1.0).abs() < 1e-6);
    }

    /// Full hand evaluation of the objective on a 2-trajectory, 2-step
    /// fixture with one-hot candidates:
    ///
    /// behavior policy is uniform over 2 candidates (stored lp = ln ½);
    /// new weights (ln 2, 0) give probabilities (⅔, ⅓). Trajectory A picks
    /// candidate 0 at both steps (ratio 4/3), trajectory B candidate 1
    /// (ratio 2/3). Clean rewards [1, 0] normalize to advantages [1, −1].
    /// With clip [0.2, 0.28]: A clips to 1.28, B clips to −0.8, and the
    /// sequence-mean aggregate is (1.28 − 0.8) / 2 = 0.24.
    #[test]
    fn objective_matches_hand_arithmetic_on_two_by_two_fixture() {
        use crate::env::{Action, FieldKey, Observation};
        use crate::policy::FeatureVector;
        use crate::rollout::StepRecord;

        let stored = 0.5f64.ln();
        let step = |chosen: usize| StepRecord {
            observation: Observation::Silence,
            candidates: vec![
                (Action::Finish, FeatureVector(vec![1.0, 0.0])),
                (
                    Action::AskUser {
                        slot: FieldKey::new("k0", "id"),
                    },
                    FeatureVector(vec![0.0, 1.0]),
                ),
            ],
            chosen,
            logprob: stored,
        };
        let traj = |chosen: usize, reward: u8| Trajectory {
            task_id: "fixture".into(),
            steps: vec![step(chosen), step(chosen)],
            reward,
            noise_tag: None,
            realization: None,
            tool_calls: 0,
            ask_turns: 0,
        };
        let group = RolloutGroup {
            task_id: "fixture".into(),
            trajectories: vec![traj(0, 1), traj(1, 0)],
            clean_indices: vec![0, 1],
            noisy_indices: Default::default(),
        };
        let params = PolicyParams {
            weights: vec![2.0f64.ln(), 0.0],
            version: 0,
        };
        let config = ObjectiveConfig::hybrid_default();

        // hand arithmetic, written out independently
        let ratio_a: f64 = (2.0 / 3.0) / 0.5;
        let ratio_b: f64 = (1.0 / 3.0) / 0.5;
        let surrogate_a = (ratio_a * 1.0).min(ratio_a.clamp(0.8, 1.28) * 1.0);
        let surrogate_b = (ratio_b * -1.0).min(ratio_b.clamp(0.8, 1.28) * -1.0);
        let expected = (surrogate_a + surrogate_b) / 2.0;
        assert!((expected - 0.24).abs() < 1e-12);

        let objective = surrogate_objective(&[group.clone()], &params, &config).unwrap();
        assert!(
            (objective - expected).abs() < 1e-10,
            "objective {objective} vs hand value {expected}"
        );

        // per-step mode gives the same value here (identical steps)
        let per_step = ObjectiveConfig {
            ratio_mode: RatioMode::PerStep,
            aggregation: Aggregation::TokenMean,
            ..config
        };
        let objective = surrogate_objective(&[group], &params, &per_step).unwrap();
        assert!((objective - expected).abs() < 1e-10);
    }

    #[test]
    fn update_without_signal_leaves_params_unchanged() {
        let params = PolicyParams {
            weights: vec![0.4, -0.2],
            version: 3,
        };
        let optimizer = OptimizerState::new(2, Default::default());
        let config = ObjectiveConfig::hybrid_default();
        // all-equal rewards: the group is filtered, no gradient flows
        let group = group_with(&[1, 1, 1, 1], &[]);
        let (next, _, diagnostics) =
            update_policy(vec![group], &params, &optimizer, &config).unwrap();
        assert_eq!(next.weights, params.weights);
        assert_eq!(diagnostics.epochs_run, 0);
        assert_eq!(diagnostics.filter.all_pass, 1);
        assert_eq!(diagnostics.contributing_trajectories, 0);
    }

    #[test]
    fn aggregation_hand_values() {
        let values = vec![vec![1.0, 1.0], vec![0.0]];
        assert_eq!(aggregate_loss(&values, Aggregation::SeqMeanTokenMean), 0.5);
        assert!((aggregate_loss(&values, Aggregation::TokenMean) - 2.0 / 3.0).abs() < 1e-15);

        let constant = vec![vec![0.3, 0.3], vec![0.3, 0.3, 0.3]];
        assert!((aggregate_loss(&constant, Aggregation::SeqMeanTokenMean) - 0.3).abs() < 1e-15);
        assert!((aggregate_loss(&constant, Aggregation::TokenMean) - 0.3).abs() < 1e-15);

        assert_eq!(aggregate_loss(&[vec![0.9]], Aggregation::TokenMean), 0.9);
        assert_eq!(
            aggregate_loss(&[vec![0.9]], Aggregation::SeqMeanTokenMean),
            0.9
        );
    }
}
