//! The adaptive noise curriculum.
//!
//! Robustness per category is the success gap Δ between paired clean and
//! noisy probe rollouts. When a category's gap falls below the threshold θ
//! the model has adapted, and both its difficulty level and its share of the
//! rollout budget escalate — the share only while the global cap allows.
//! Levels and fractions never decrease.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::noise::NoiseCategory;
use crate::rollout::NoiseAllocation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryState {
    pub level: u32,
    pub fraction: f64,
    pub delta_history: Vec<f64>,
}

impl Default for CategoryState {
    fn default() -> Self {
        CategoryState {
            level: 0,
            fraction: 0.0,
            delta_history: Vec::new(),
        }
    }
}

/// Scheduler knobs plus per-category state. Training starts fully clean:
/// every level and fraction is zero until the first escalation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub categories: BTreeMap<NoiseCategory, CategoryState>,
    /// Escalation threshold θ on the clean-vs-noisy gap.
    pub theta: f64,
    /// Fraction increment per escalation.
    pub fraction_step: f64,
    /// Global cap on the summed noisy fractions.
    pub rho_max: f64,
    /// Evaluation window: probes run every `window` iterations.
    pub window: usize,
}

impl Default for SchedulerState {
    fn default() -> Self {
        SchedulerState::new(0.05, 1.0 / 16.0, 0.5, 5)
    }
}

impl SchedulerState {
    pub fn new(theta: f64, fraction_step: f64, rho_max: f64, window: usize) -> Self {
        assert!(rho_max <= 0.5, "noisy share is capped at half the rollouts");
        SchedulerState {
            categories: NoiseCategory::ALL
                .iter()
                .map(|c| (*c, CategoryState::default()))
                .collect(),
            theta,
            fraction_step,
            rho_max,
            window,
        }
    }

    pub fn total_fraction(&self) -> f64 {
        self.categories.values().map(|c| c.fraction).sum()
    }

    fn assert_cap(&self) {
        assert!(
            self.total_fraction() <= self.rho_max + 1e-12,
            "summed noisy fractions {} exceed the cap {}",
            self.total_fraction(),
            self.rho_max
        );
    }
}

/// One probe measurement: paired clean/noisy success rates for a category.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub category: NoiseCategory,
    pub clean_rate: f64,
    pub noisy_rate: f64,
    pub tasks: usize,
}

impl ProbeResult {
    pub fn delta(&self) -> f64 {
        compute_delta_rates(self.clean_rate, self.noisy_rate)
    }
}

/// Δ = mean(clean) − mean(noisy) over binary rewards.
pub fn compute_delta(clean: &[u8], noisy: &[u8]) -> f64 {
    assert!(
        !clean.is_empty() && !noisy.is_empty(),
        "delta needs nonempty reward lists"
    );
    let mean = |xs: &[u8]| xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64;
    mean(clean) - mean(noisy)
}

fn compute_delta_rates(clean: f64, noisy: f64) -> f64 {
    clean - noisy
}

/// Escalation rule, applied per category in the fixed taxonomy order so cap
/// contention is deterministic: a gap below θ raises the level, and raises
/// the fraction too unless that would break the global cap (the level still
/// rises — difficulty is the remaining lever once the cap binds).
pub fn schedule_step(
    state: &SchedulerState,
    probes: &BTreeMap<NoiseCategory, f64>,
) -> SchedulerState {
    let mut next = state.clone();
    for category in NoiseCategory::ALL {
        let Some(&delta) = probes.get(&category) else {
            continue;
        };
        let total = next.total_fraction();
        let entry = next
            .categories
            .get_mut(&category)
            .expect("all categories present");
        entry.delta_history.push(delta);
        if delta < state.theta {
            entry.level += 1;
            if total + state.fraction_step <= state.rho_max + 1e-12 {
                entry.fraction += state.fraction_step;
            }
        }
    }
    next.assert_cap();
    next
}

/// Measures one category's robustness with dedicated evaluation rollouts:
/// for each probe task, paired clean and noisy episodes at
/// `max(level, 1)` — categories that have not entered training yet are still
/// probed at level 1. Probe trajectories never feed the policy update.
#[allow(clippy::too_many_arguments)]
pub fn probe(
    policy: &crate::policy::PolicyParams,
    layout: &crate::policy::FeatureLayout,
    domain: &crate::env::DomainGraph,
    tasks: &[(crate::env::TaskSpec, crate::env::Database)],
    state: &SchedulerState,
    category: NoiseCategory,
    rollouts_per_task: usize,
    seed: u64,
) -> ProbeResult {
    use rayon::prelude::*;
    assert!(tasks.len() >= 4, "probes need at least 4 tasks");
    let level = state.categories[&category].level.max(1);
    let spec = crate::noise::NoiseSpec::new(category, level);

    let jobs: Vec<(usize, usize, bool)> = (0..tasks.len())
        .flat_map(|t| (0..rollouts_per_task).flat_map(move |r| [(t, r, false), (t, r, true)]))
        .collect();
    let rewards: Vec<(bool, u8)> = jobs
        .par_iter()
        .map(|&(t, r, noisy)| {
            let (task, db) = &tasks[t];
            let episode_seed = crate::seeding::derive_seed(
                seed,
                &[
                    crate::seeding::tags::PROBE,
                    category as u64,
                    t as u64,
                    r as u64,
                    noisy as u64,
                ],
            );
            let trajectory = crate::rollout::run_episode(
                policy,
                layout,
                domain,
                task,
                db,
                noisy.then_some(spec),
                task.default_turn_budget(),
                1.0,
                episode_seed,
            )
            .expect("probe episode runs");
            (noisy, trajectory.reward)
        })
        .collect();

    let rate = |want_noisy: bool| {
        let subset: Vec<u8> = rewards
            .iter()
            .filter(|(n, _)| *n == want_noisy)
            .map(|(_, r)| *r)
            .collect();
        subset.iter().map(|&r| r as f64).sum::<f64>() / subset.len() as f64
    };
    ProbeResult {
        category,
        clean_rate: rate(false),
        noisy_rate: rate(true),
        tasks: tasks.len(),
    }
}

/// Converts fractions into per-category episode counts for a group of `n`
/// rollouts: `round(fraction · n)` each, trimmed in reverse taxonomy order
/// if rounding pushes the total past `floor(rho_max · n)`.
pub fn allocate_noise(state: &SchedulerState, n: usize) -> NoiseAllocation {
    assert!(n >= 2);
    let cap = (state.rho_max * n as f64).floor() as usize;
    let mut counts: Vec<(NoiseCategory, u32, usize)> = Vec::new();
    for category in NoiseCategory::ALL {
        let cat = &state.categories[&category];
        let count = (cat.fraction * n as f64).round() as usize;
        if count > 0 {
            counts.push((category, cat.level, count));
        }
    }
    let mut total: usize = counts.iter().map(|(_, _, c)| c).sum();
    while total > cap {
        for entry in counts.iter_mut().rev() {
            if entry.2 > 0 {
                entry.2 -= 1;
                total -= 1;
                break;
            }
        }
    }
    counts.retain(|(_, _, c)| *c > 0);
    let allocation = NoiseAllocation { entries: counts };
    debug_assert!(allocation.total() <= cap);
    debug_assert!(n - allocation.total() >= n.div_ceil(2));
    allocation
}
