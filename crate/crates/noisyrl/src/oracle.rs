//! Brute-force solvability oracle.
//!
//! Breadth-first search over action sequences under a fixed noise
//! realization, with visited-state pruning. Because the perturbation tape is
//! pure in `(spec, seed, ordinal)` and user-side rewrites happen before the
//! episode, the oracle explores exactly the environment a policy would face,
//! so "the oracle found a witness" means "this perturbed task is solvable".
//! BFS also yields a shortest witness, which the solvability bound is stated
//! against.

use std::collections::{HashSet, VecDeque};

use crate::env::{
    enumerate_actions, step_noisy, user_turn, verify, Action, Database, DomainGraph, EnvState,
    InteractionScript, TaskSpec,
};
use crate::noise::{
    perturb_interaction, NoiseDraw, NoiseRealization, NoiseSide, NoiseSpec, NoiseStream,
};
use crate::rollout::clamp_user_level;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub solved: bool,
    pub witness: Option<Vec<Action>>,
    /// Nodes expanded before success or exhaustion.
    pub explored: usize,
    /// Perturbation firings / script anomalies encountered along the witness.
    pub anomalies_on_witness: usize,
}

/// Searches for any action sequence of length ≤ `max_depth` that achieves
/// reward 1 under the fixed realization `(spec, seed)`. `None` noise searches
/// the clean environment.
pub fn oracle_solve(
    domain: &DomainGraph,
    task: &TaskSpec,
    initial_db: &Database,
    noise: Option<(NoiseSpec, u64)>,
    max_depth: usize,
    node_budget: usize,
) -> OracleResult {
    let (script, stream) = match noise {
        Some((spec, seed)) if spec.side() == NoiseSide::User => {
            let spec = clamp_user_level(spec, task);
            match perturb_interaction(&task.interaction_script, spec, seed, domain, initial_db) {
                Ok((script, _)) => (script, None),
                Err(_) => {
                    return OracleResult {
                        solved: false,
                        witness: None,
                        explored: 0,
                        anomalies_on_witness: 0,
                    }
                }
            }
        }
        Some((spec, seed)) => (
            task.interaction_script.clone(),
            Some(NoiseStream::new(spec, seed, domain, initial_db)),
        ),
        None => (task.interaction_script.clone(), None),
    };
    oracle_solve_with_script(
        domain,
        task,
        initial_db,
        script,
        stream,
        max_depth,
        node_budget,
    )
}

/// The search itself, over an explicit (possibly hand-built) script and tool
/// noise session. Exposed so hostile fixtures can demonstrate the guard.
pub fn oracle_solve_with_script(
    domain: &DomainGraph,
    task: &TaskSpec,
    initial_db: &Database,
    script: InteractionScript,
    stream: Option<NoiseStream>,
    max_depth: usize,
    node_budget: usize,
) -> OracleResult {
    let mut root = EnvState::new(initial_db.clone(), script);
    user_turn(&mut root);

    let mut visited: HashSet<String> = HashSet::new();
    visited.insert(state_key(&root, domain, task));
    let mut queue: VecDeque<(EnvState, Vec<Action>)> = VecDeque::new();
    queue.push_back((root, Vec::new()));
    let mut explored = 0;

    while let Some((env, path)) = queue.pop_front() {
        if path.len() >= max_depth {
            continue;
        }
        explored += 1;
        if explored > node_budget {
            break;
        }
        for action in enumerate_actions(&env, domain) {
            let mut next = env.clone();
            let mut branch_stream = stream.clone();
            if step_noisy(&mut next, domain, action.clone(), branch_stream.as_mut()).is_err() {
                continue;
            }
            let mut witness_path = path.clone();
            witness_path.push(action);
            if next.terminated {
                if verify(&next, task) == 1 {
                    let anomalies =
                        count_witness_anomalies(domain, task, initial_db, &stream, &witness_path);
                    return OracleResult {
                        solved: true,
                        witness: Some(witness_path),
                        explored,
                        anomalies_on_witness: anomalies,
                    };
                }
                continue;
            }
            user_turn(&mut next);
            let key = state_key(&next, domain, task);
            if visited.insert(key) {
                queue.push_back((next, witness_path));
            }
        }
    }

    OracleResult {
        solved: false,
        witness: None,
        explored,
        anomalies_on_witness: 0,
    }
}

/// Canonical state fingerprint: everything that can influence future
/// observations or the final verdict. Two histories reaching the same
/// fingerprint are interchangeable for the search (claim order, for example,
/// changes nothing the oracle can observe).
fn state_key(env: &EnvState, domain: &DomainGraph, task: &TaskSpec) -> String {
    let db = serde_json::to_string(&env.db).unwrap();
    // observed groundable values gate candidate enumeration; claimed slots
    // gate the ask menu
    let pool = serde_json::to_string(&env.observed_values(domain)).unwrap();
    let claimed = serde_json::to_string(&env.claimed_slots()).unwrap();
    let flags = serde_json::to_string(&env.pending_noise).unwrap();
    let reads: Vec<bool> = task
        .required_reads
        .iter()
        .map(|read| {
            env.history.iter().any(|e| match e {
                crate::env::HistoryEvent::Agent {
                    action: Action::ToolCall { tool, grounding },
                    observation: crate::env::Observation::ToolResult(res),
                } => tool == &read.tool && grounding == &read.args && res.status.is_ok(),
                _ => false,
            })
        })
        .collect();
    format!(
        "{db}|{pool}|{claimed}|{flags}|{reads:?}|{}|{}",
        env.script_cursor, env.terminated
    )
}

fn count_witness_anomalies(
    domain: &DomainGraph,
    task: &TaskSpec,
    initial_db: &Database,
    stream: &Option<NoiseStream>,
    witness: &[Action],
) -> usize {
    match stream {
        None => 0,
        Some(s) => {
            // replay the witness, counting fired draws
            let mut env = EnvState::new(initial_db.clone(), task.interaction_script.clone());
            user_turn(&mut env);
            let mut replay_stream = s.clone();
            replay_stream.draw_log.clear();
            for action in witness {
                if step_noisy(&mut env, domain, action.clone(), Some(&mut replay_stream)).is_err() {
                    break;
                }
                if !env.terminated {
                    user_turn(&mut env);
                }
            }
            replay_stream
                .draw_log
                .iter()
                .filter(|d| matches!(d, NoiseDraw::ToolCall { fired: true, .. }))
                .count()
        }
    }
}

/// Runs the oracle under a recorded realization and reports whether the task
/// remains solvable within the depth budget.
pub fn check_solvable(
    domain: &DomainGraph,
    task: &TaskSpec,
    initial_db: &Database,
    realization: &NoiseRealization,
    max_depth: usize,
    node_budget: usize,
) -> OracleResult {
    // user-side anomalies are realized pre-episode; count them directly
    let mut result = oracle_solve(
        domain,
        task,
        initial_db,
        Some((realization.spec, realization.seed)),
        max_depth,
        node_budget,
    );
    if realization.spec.side() == NoiseSide::User && result.solved {
        result.anomalies_on_witness = clamp_user_level(realization.spec, task).params().m;
    }
    result
}
