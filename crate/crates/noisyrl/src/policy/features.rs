//! Feature extraction for candidate actions.
//!
//! All features are deterministic functions of (history, candidate, task
//! context) with entries in [0, 1]. The layout is fixed per domain: action
//! type and tool one-hots, grounding freshness, progress against the
//! requested tool sequence, retry and clarification cues, and the
//! observation-class / turn-index / slot-revealed context block.

use serde::{Deserialize, Serialize};

use crate::env::{Action, DomainGraph, EnvState, FieldKey, Observation, TaskSpec};

use super::PolicyParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// The per-domain feature layout. Width is `3 + tools + 12 + 3 + 1 + keys`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub tools: Vec<String>,
    pub field_keys: Vec<FieldKey>,
}

// scalar feature block, offsets relative to 3 + tools
const F_GROUNDING_KNOWN: usize = 0;
const F_GROUNDING_LATEST: usize = 1;
const F_SEQ_NEXT: usize = 2;
/// A re-issue of a requested tool that already completed (the recovery move
/// against corrupted or truncated results), distinct from plain wrong calls.
const F_SEQ_REDO: usize = 3;
const F_SEQ_WRONG: usize = 4;
/// Graded repeat counter for this exact call: 0, 0.5, 1.0 at ≥ 2 ok
/// completions. Lets a policy double-check once without looping forever.
const F_REPEAT_COUNT: usize = 5;
const F_RETRY_SAME: usize = 6;
const F_RETRY_AFTER_ERROR: usize = 7;
const F_ASK_UNREVEALED: usize = 8;
const F_ASK_REVEALED: usize = 9;
const F_ASK_NEEDED: usize = 10;
const F_FINISH_READY: usize = 11;
const F_FINISH_EARLY: usize = 12;
const SCALARS: usize = 13;

impl FeatureLayout {
    pub fn for_domain(domain: &DomainGraph) -> Self {
        FeatureLayout {
            tools: domain.tools.iter().map(|t| t.name.clone()).collect(),
            field_keys: domain.field_keys(),
        }
    }

    pub fn dim(&self) -> usize {
        3 + self.tools.len() + SCALARS + 3 + 1 + self.field_keys.len()
    }

    fn scalar(&self, offset: usize) -> usize {
        3 + self.tools.len() + offset
    }

    fn obs_class(&self, offset: usize) -> usize {
        3 + self.tools.len() + SCALARS + offset
    }

    fn turn_norm(&self) -> usize {
        3 + self.tools.len() + SCALARS + 3
    }

    fn slot_revealed(&self, key_index: usize) -> usize {
        3 + self.tools.len() + SCALARS + 3 + 1 + key_index
    }
}

/// The policy-visible slice of a task: which slots the user may talk about
/// and which tools the request names, in order. Groundings and the target
/// state stay hidden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub goal_slots: Vec<FieldKey>,
    pub requested_tools: Vec<String>,
    pub turn_budget: usize,
}

impl TaskContext {
    pub fn from_task(task: &TaskSpec, turn_budget: usize) -> Self {
        TaskContext {
            goal_slots: task.goal_slots.keys().cloned().collect(),
            requested_tools: task.requested_tools(),
            turn_budget,
        }
    }

    /// Progress pointer: how many leading requested tools have completed ok.
    pub fn progress(&self, env: &EnvState) -> usize {
        let mut ptr = 0;
        for event in &env.history {
            if ptr == self.requested_tools.len() {
                break;
            }
            if let crate::env::HistoryEvent::Agent {
                action: Action::ToolCall { tool, .. },
                observation: Observation::ToolResult(res),
            } = event
            {
                if res.status.is_ok() && tool == &self.requested_tools[ptr] {
                    ptr += 1;
                }
            }
        }
        ptr
    }
}

/// Featurizes one candidate against the current history.
pub fn featurize(
    layout: &FeatureLayout,
    domain: &DomainGraph,
    env: &EnvState,
    ctx: &TaskContext,
    candidate: &Action,
) -> FeatureVector {
    let mut x = vec![0.0; layout.dim()];

    let latest_claims = env.latest_claims();
    let latest_results = env.latest_result_values(domain);
    let claimed = env.claimed_slots();
    let completed = env.completed_call_counts();
    let progress = ctx.progress(env);
    let pending = ctx.requested_tools.get(progress);

    match candidate {
        Action::ToolCall { tool, grounding } => {
            x[0] = 1.0;
            if let Some(ti) = layout.tools.iter().position(|t| t == tool) {
                x[3 + ti] = 1.0;
            }
            if let Some(spec) = domain.tool(tool) {
                let mut known = 0.0;
                let mut fresh = 0.0;
                for (slot, key) in &spec.arg_slots {
                    let value = grounding.get(slot);
                    let claim = latest_claims.get(key);
                    let result = latest_results.get(key);
                    if value.is_some() && (value == claim || value == result) {
                        known += 1.0;
                    }
                    // freshest source wins: a claim if one exists, otherwise
                    // the latest ok result
                    let freshest = claim.or(result);
                    if value.is_some() && value == freshest {
                        fresh += 1.0;
                    }
                }
                let n = spec.arg_slots.len().max(1) as f64;
                x[layout.scalar(F_GROUNDING_KNOWN)] = known / n;
                x[layout.scalar(F_GROUNDING_LATEST)] = fresh / n;
            }
            match pending {
                Some(next) if next == tool => x[layout.scalar(F_SEQ_NEXT)] = 1.0,
                _ if ctx.requested_tools[..progress].contains(tool) => {
                    x[layout.scalar(F_SEQ_REDO)] = 1.0
                }
                _ => x[layout.scalar(F_SEQ_WRONG)] = 1.0,
            }
            if let Some(key) = candidate.call_key() {
                let count = completed.get(&key).copied().unwrap_or(0);
                x[layout.scalar(F_REPEAT_COUNT)] = (count.min(2) as f64) / 2.0;
            }
            if env.last_agent_action() == Some(candidate) {
                x[layout.scalar(F_RETRY_SAME)] = 1.0;
                if env
                    .last_observation()
                    .map(|o| o.is_tool_error())
                    .unwrap_or(false)
                {
                    x[layout.scalar(F_RETRY_AFTER_ERROR)] = 1.0;
                }
            }
        }
        Action::AskUser { slot } => {
            x[1] = 1.0;
            if claimed.contains(slot) {
                x[layout.scalar(F_ASK_REVEALED)] = 1.0;
            } else {
                x[layout.scalar(F_ASK_UNREVEALED)] = 1.0;
                // asking is urgent when the pending tool cannot be grounded
                // without this slot
                if let Some(next) = pending {
                    if let Some(spec) = domain.tool(next) {
                        let blocked = spec.arg_slots.iter().any(|(_, key)| {
                            key == slot
                                && !latest_claims.contains_key(key)
                                && !latest_results.contains_key(key)
                        });
                        if blocked {
                            x[layout.scalar(F_ASK_NEEDED)] = 1.0;
                        }
                    }
                }
            }
        }
        Action::Finish => {
            x[2] = 1.0;
            if progress == ctx.requested_tools.len() {
                x[layout.scalar(F_FINISH_READY)] = 1.0;
            } else {
                x[layout.scalar(F_FINISH_EARLY)] = 1.0;
            }
        }
    }

    match env.last_observation() {
        Some(Observation::UserMessage { .. }) => x[layout.obs_class(0)] = 1.0,
        Some(obs) if obs.is_tool_ok() => x[layout.obs_class(1)] = 1.0,
        Some(obs) if obs.is_tool_error() => x[layout.obs_class(2)] = 1.0,
        _ => {}
    }
    x[layout.turn_norm()] = (env.actions_taken() as f64 / ctx.turn_budget.max(1) as f64).min(1.0);
    for (ki, key) in layout.field_keys.iter().enumerate() {
        if claimed.contains(key) {
            x[layout.slot_revealed(ki)] = 1.0;
        }
    }

    debug_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
    FeatureVector(x)
}

/// Hand-set weights that follow the requested tool sequence, prefer fresh
/// groundings, ask when blocked, retry after transient errors, and finish
/// when the request is complete. Used as the reference policy in evaluations
/// and examples; training should approach this behavior from random init.
pub fn expert_params(layout: &FeatureLayout) -> PolicyParams {
    let mut w = vec![0.0; layout.dim()];
    w[layout.scalar(F_GROUNDING_KNOWN)] = 1.0;
    w[layout.scalar(F_GROUNDING_LATEST)] = 4.0;
    w[layout.scalar(F_SEQ_NEXT)] = 6.0;
    w[layout.scalar(F_SEQ_REDO)] = -2.0;
    w[layout.scalar(F_SEQ_WRONG)] = -6.0;
    w[layout.scalar(F_REPEAT_COUNT)] = -4.0;
    w[layout.scalar(F_RETRY_AFTER_ERROR)] = 8.0;
    w[layout.scalar(F_ASK_UNREVEALED)] = 2.0;
    w[layout.scalar(F_ASK_REVEALED)] = -3.0;
    w[layout.scalar(F_ASK_NEEDED)] = 6.0;
    w[layout.scalar(F_FINISH_READY)] = 9.0;
    w[layout.scalar(F_FINISH_EARLY)] = -9.0;
    PolicyParams {
        weights: w,
        version: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{
        build_domain, enumerate_actions, synthesize_task, user_turn, DomainSize, EnvState,
    };

    fn fixture() -> (DomainGraph, TaskSpec, crate::env::Database) {
        let domain = build_domain(
            DomainSize {
                tools: 9,
                entity_kinds: 3,
                links: 2,
            },
            7,
        )
        .unwrap();
        let (task, db) = synthesize_task(&domain, 3, 1).unwrap();
        (domain, task, db)
    }

    #[test]
    fn finish_at_turn_zero() {
        let (domain, task, db) = fixture();
        let layout = FeatureLayout::for_domain(&domain);
        let env = EnvState::new(db, task.interaction_script.clone());
        let ctx = TaskContext::from_task(&task, task.default_turn_budget());
        let x = featurize(&layout, &domain, &env, &ctx, &Action::Finish);
        assert_eq!(x.0[2], 1.0, "finish one-hot set");
        assert_eq!(x.0[0], 0.0);
        assert_eq!(x.0[layout.turn_norm()], 0.0, "turn index 0");
        assert_eq!(x.0[layout.scalar(F_FINISH_EARLY)], 1.0);
    }

    #[test]
    fn grounding_known_after_reveal() {
        let (domain, task, db) = fixture();
        let layout = FeatureLayout::for_domain(&domain);
        let mut env = EnvState::new(db, task.interaction_script.clone());
        user_turn(&mut env);
        let ctx = TaskContext::from_task(&task, task.default_turn_budget());
        let first = &task.reference_chain[0];
        let call = Action::ToolCall {
            tool: first.tool.clone(),
            grounding: first.args.clone(),
        };
        let x = featurize(&layout, &domain, &env, &ctx, &call);
        assert_eq!(x.0[layout.scalar(F_GROUNDING_KNOWN)], 1.0);
        assert_eq!(x.0[layout.scalar(F_SEQ_NEXT)], 1.0);
    }

    #[test]
    fn vectors_differ_only_in_observation_class_block() {
        let (domain, task, db) = fixture();
        let layout = FeatureLayout::for_domain(&domain);
        let ctx = TaskContext::from_task(&task, task.default_turn_budget());

        // two histories identical except for the class of the last tool
        // observation (ok vs error); the probe candidate is not a retry of
        // the last action, so only the class indicators may move
        let call = Action::ToolCall {
            tool: "get_k0".into(),
            grounding: std::collections::BTreeMap::from([(
                "id".to_string(),
                crate::env::Value::str("K0-01"),
            )]),
        };
        let result = |status: crate::env::ToolStatus| crate::env::ToolResult {
            tool: "get_k0".into(),
            status,
            fields: Default::default(),
        };
        let build = |status: crate::env::ToolStatus| {
            let mut env = EnvState::new(db.clone(), task.interaction_script.clone());
            user_turn(&mut env);
            env.history.push(crate::env::HistoryEvent::Agent {
                action: call.clone(),
                observation: Observation::ToolResult(result(status)),
            });
            env
        };
        let env_ok = build(crate::env::ToolStatus::Ok);
        let env_err = build(crate::env::ToolStatus::Error("not_found".into()));

        let x_ok = featurize(&layout, &domain, &env_ok, &ctx, &Action::Finish);
        let x_err = featurize(&layout, &domain, &env_err, &ctx, &Action::Finish);
        for i in 0..layout.dim() {
            let in_obs_block = (layout.obs_class(0)..=layout.obs_class(2)).contains(&i);
            if in_obs_block {
                continue;
            }
            // the ok result also advances the requested-sequence pointer, so
            // finish-readiness may legitimately move with it; everything
            // else must be identical
            if i == layout.scalar(F_FINISH_READY) || i == layout.scalar(F_FINISH_EARLY) {
                continue;
            }
            assert_eq!(x_ok.0[i], x_err.0[i], "feature {i} differs");
        }
        assert_eq!(x_ok.0[layout.obs_class(1)], 1.0);
        assert_eq!(x_err.0[layout.obs_class(2)], 1.0);
    }

    #[test]
    fn featurize_is_deterministic() {
        let (domain, task, db) = fixture();
        let layout = FeatureLayout::for_domain(&domain);
        let mut env = EnvState::new(db, task.interaction_script.clone());
        user_turn(&mut env);
        let ctx = TaskContext::from_task(&task, task.default_turn_budget());
        for action in enumerate_actions(&env, &domain) {
            let a = featurize(&layout, &domain, &env, &ctx, &action);
            let b = featurize(&layout, &domain, &env, &ctx, &action);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn entries_stay_in_unit_interval() {
        let (domain, task, db) = fixture();
        let layout = FeatureLayout::for_domain(&domain);
        let mut env = EnvState::new(db, task.interaction_script.clone());
        user_turn(&mut env);
        let ctx = TaskContext::from_task(&task, task.default_turn_budget());
        for action in enumerate_actions(&env, &domain) {
            let x = featurize(&layout, &domain, &env, &ctx, &action);
            assert_eq!(x.dim(), layout.dim());
            assert!(x.0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
