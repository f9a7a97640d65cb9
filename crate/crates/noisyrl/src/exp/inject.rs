//! Offline noise preview: perturb a task fixture, show the diff, and run the
//! solvability guard.

use serde::{Deserialize, Serialize};

use crate::env::{Database, DomainGraph, ScriptSegment, TaskSpec};
use crate::noise::{NoiseRealization, NoiseSide, NoiseSpec};
use crate::oracle::{check_solvable, OracleResult};
use crate::rollout::clamp_user_level;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InjectOutcome {
    pub task_id: String,
    pub category: String,
    pub level: u32,
    pub seed: u64,
    pub diff: Vec<String>,
    pub solvable: bool,
    pub witness_length: Option<usize>,
    pub explored_nodes: usize,
    pub realization: NoiseRealization,
}

/// Applies a perturbation to one task, reports a before/after script diff and
/// the guard's verdict.
pub fn run_inject(
    domain: &DomainGraph,
    task: &TaskSpec,
    initial_db: &Database,
    spec: NoiseSpec,
    seed: u64,
) -> Result<InjectOutcome, crate::noise::NoiseError> {
    let effective = clamp_user_level(spec, task);
    let mut diff = Vec::new();
    let realization = match effective.side() {
        NoiseSide::User => {
            let (perturbed, realization) = crate::noise::perturb_interaction(
                &task.interaction_script,
                effective,
                seed,
                domain,
                initial_db,
            )?;
            diff = script_diff(&task.interaction_script, &perturbed);
            realization
        }
        NoiseSide::Tool => {
            diff.push(format!(
                "tool-side tape: p = {:.2}, severity = {:.2} per ok call",
                effective.params().p,
                effective.params().s
            ));
            NoiseRealization::new(effective, seed)
        }
    };

    let depth = task.default_turn_budget();
    let OracleResult {
        solved,
        witness,
        explored,
        ..
    } = check_solvable(domain, task, initial_db, &realization, depth, 500_000);

    Ok(InjectOutcome {
        task_id: task.task_id.clone(),
        category: effective.category.name().to_string(),
        level: effective.level,
        seed,
        diff,
        solvable: solved,
        witness_length: witness.map(|w| w.len()),
        explored_nodes: explored,
        realization,
    })
}

fn describe(seg: &ScriptSegment) -> String {
    match seg {
        ScriptSegment::Reveal { slot, value } => format!("reveal {slot}={value}"),
        ScriptSegment::Decoy { slot, value } => format!("claim {slot}={value}"),
        ScriptSegment::Withhold { slot } => format!("withhold {slot}"),
        ScriptSegment::Distractor { text } => format!("say {text:?}"),
    }
}

fn script_diff(
    before: &crate::env::InteractionScript,
    after: &crate::env::InteractionScript,
) -> Vec<String> {
    let mut out = Vec::new();
    let turns = before.turns.len().max(after.turns.len());
    for ti in 0..turns {
        let b: Vec<String> = before
            .turns
            .get(ti)
            .map(|t| t.segments.iter().map(describe).collect())
            .unwrap_or_default();
        let a: Vec<String> = after
            .turns
            .get(ti)
            .map(|t| t.segments.iter().map(describe).collect())
            .unwrap_or_default();
        for seg in &b {
            if !a.contains(seg) {
                out.push(format!("turn {ti}: - {seg}"));
            }
        }
        for seg in &a {
            if !b.contains(seg) {
                out.push(format!("turn {ti}: + {seg}"));
            }
        }
    }
    for (slot, value) in &after.clarification_table {
        if !before.clarification_table.contains_key(slot) {
            out.push(format!("clarifications: + {slot}={value}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_domain, synthesize_task, DomainSize};
    use crate::noise::NoiseCategory;

    #[test]
    fn level_zero_has_empty_diff_and_is_solvable() {
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
        let outcome = run_inject(
            &domain,
            &task,
            &db,
            NoiseSpec::new(NoiseCategory::Ambiguous, 0),
            5,
        )
        .unwrap();
        assert!(outcome.diff.is_empty());
        assert!(outcome.solvable);
    }

    #[test]
    fn ambiguous_diff_shows_the_withheld_slot() {
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
        let outcome = run_inject(
            &domain,
            &task,
            &db,
            NoiseSpec::new(NoiseCategory::Ambiguous, 1),
            5,
        )
        .unwrap();
        assert!(outcome.solvable, "ambiguous level 1 stays solvable");
        assert!(
            outcome.diff.iter().any(|d| d.contains("withhold")),
            "diff must show the withheld slot: {:?}",
            outcome.diff
        );
    }
}
