//! Tool-side noise: perturbs ok tool results during the episode.
//!
//! Each eligible call consumes one position on a decision tape derived from
//! `(spec, seed, ordinal)`. Once a call has been perturbed its exact
//! grounding becomes exempt, so an identical retry always yields the true
//! result — that single guarantee is what keeps every noisy task solvable.

use std::collections::BTreeMap;

use rand::Rng;

use crate::env::{
    Action, Database, DomainGraph, EnvState, FieldKey, ObsValue, Observation, ToolResult,
    ToolStatus, Value,
};
use crate::seeding::{self, tags};

use super::{NoiseCategory, NoiseDraw, NoiseRealization, NoiseSide, NoiseSpec, TRUNCATION_MARKER};

/// Error code reported for transient failures.
pub const FAILURE_CODE: &str = "429 rate limited";

/// Per-episode tool-noise session: the decision tape plus the value pools
/// snapshotted from the initial database (pools must not drift with the
/// mutating episode database, or replay under different action orders would
/// diverge).
#[derive(Clone, Debug)]
pub struct NoiseStream {
    pub spec: NoiseSpec,
    pub seed: u64,
    pools: BTreeMap<FieldKey, Vec<Value>>,
    /// (tool name, result field name) -> typed slot, for corruption draws.
    result_keys: BTreeMap<(String, String), FieldKey>,
    distractors: Vec<(String, Value)>,
    pub draw_log: Vec<NoiseDraw>,
}

impl NoiseStream {
    pub fn new(spec: NoiseSpec, seed: u64, domain: &DomainGraph, initial_db: &Database) -> Self {
        let mut pools = BTreeMap::new();
        for key in domain.field_keys() {
            pools.insert(key.clone(), initial_db.pool(&domain.entity_schemas, &key));
        }
        let mut result_keys = BTreeMap::new();
        for tool in &domain.tools {
            for name in &tool.result_schema {
                if let Some(key) = domain.result_field_key(tool, name) {
                    result_keys.insert((tool.name.clone(), name.clone()), key);
                }
            }
        }
        // plausible-but-irrelevant key/value pairs for redundant output noise;
        // the field names are deliberately outside every result schema so the
        // clutter never grounds a candidate action
        let mut distractors = Vec::new();
        for schema in &domain.entity_schemas {
            for field in &schema.fields {
                for value in initial_db.pool(&domain.entity_schemas, &field.key) {
                    distractors.push((format!("related_{}_{}", schema.kind, field.name), value));
                }
            }
        }
        NoiseStream {
            spec,
            seed,
            pools,
            result_keys,
            distractors,
            draw_log: Vec::new(),
        }
    }

    /// The tape: decision for the i-th eligible call. Pure in
    /// `(spec, seed, ordinal)`.
    fn decision(&self, ordinal: u64) -> (bool, u64) {
        let mut rng = seeding::rng_for(
            self.seed,
            &[
                tags::NOISE,
                self.spec.category as u64,
                self.spec.level as u64,
                ordinal,
            ],
        );
        let fired = rng.gen_bool(self.spec.params().p);
        (fired, rng.gen::<u64>())
    }

    pub fn into_realization(self) -> NoiseRealization {
        NoiseRealization {
            spec: self.spec,
            seed: self.seed,
            draw_log: self.draw_log,
        }
    }
}

/// Applies the tool-side transform to an ok tool result, consuming one tape
/// position. Exempt calls (already perturbed once) pass through untouched.
/// The database itself is never modified here; failure perturbations are
/// handled by the episode driver reverting the call's effect, so a failed
/// call is a call that never ran.
pub fn perturb_tool_output(
    obs: Observation,
    env: &mut EnvState,
    stream: &mut NoiseStream,
    action: &Action,
) -> Observation {
    debug_assert_eq!(stream.spec.side(), NoiseSide::Tool);
    let result = match &obs {
        Observation::ToolResult(r) if r.status.is_ok() => r.clone(),
        _ => return obs,
    };
    let Some(call_key) = action.call_key() else {
        return obs;
    };
    if env.pending_noise.exempt.contains(&call_key) {
        return obs;
    }
    let ordinal = env.pending_noise.draw_cursor;
    env.pending_noise.draw_cursor += 1;
    let (fired, pick) = stream.decision(ordinal);
    stream.draw_log.push(NoiseDraw::ToolCall {
        ordinal,
        fired,
        pick,
    });
    if !fired {
        return obs;
    }
    // a perturbed call is served truthfully from now on
    env.pending_noise.exempt.insert(call_key);
    let params = stream.spec.params();

    match stream.spec.category {
        NoiseCategory::Failure => Observation::ToolResult(ToolResult {
            tool: result.tool,
            status: ToolStatus::Error(FAILURE_CODE.into()),
            fields: BTreeMap::new(),
        }),
        NoiseCategory::Incomplete => {
            let mut fields = result.fields.clone();
            let has_list = fields.values().any(|v| matches!(v, ObsValue::List(_)));
            if has_list {
                for value in fields.values_mut() {
                    if let ObsValue::List(items) = value {
                        let keep = keep_count(items.len(), params.s);
                        items.truncate(keep);
                        items.push(Value::str(TRUNCATION_MARKER));
                    }
                }
            } else {
                // scalar results lose trailing fields instead
                let keep = keep_count(fields.len(), params.s);
                let retained: Vec<String> = fields.keys().take(keep).cloned().collect();
                fields.retain(|k, _| retained.contains(k));
                fields.insert(
                    "truncated".into(),
                    ObsValue::Scalar(Value::str(TRUNCATION_MARKER)),
                );
            }
            Observation::ToolResult(ToolResult {
                tool: result.tool,
                status: ToolStatus::Ok,
                fields,
            })
        }
        NoiseCategory::Misleading => {
            let mut fields = result.fields.clone();
            // corruptible fields: any scalar, or any list entry, with a
            // type-valid alternative in the pool
            let candidates: Vec<(String, Option<usize>, Vec<Value>)> = fields
                .iter()
                .flat_map(|(name, v)| {
                    let key = stream.result_keys.get(&(result.tool.clone(), name.clone()));
                    let alternatives = |current: &Value| -> Vec<Value> {
                        key.and_then(|k| stream.pools.get(k))
                            .map(|pool| pool.iter().filter(|p| *p != current).cloned().collect())
                            .unwrap_or_default()
                    };
                    match v {
                        ObsValue::Scalar(value) => {
                            vec![(name.clone(), None, alternatives(value))]
                        }
                        ObsValue::List(items) => items
                            .iter()
                            .enumerate()
                            .map(|(i, value)| (name.clone(), Some(i), alternatives(value)))
                            .collect(),
                    }
                })
                .filter(|(_, _, alternatives)| !alternatives.is_empty())
                .collect();
            if candidates.is_empty() {
                return Observation::ToolResult(result);
            }
            let (name, index, alternatives) = &candidates[(pick as usize) % candidates.len()];
            let replacement = alternatives[((pick >> 8) as usize) % alternatives.len()].clone();
            match (fields.get_mut(name), index) {
                (Some(ObsValue::List(items)), Some(i)) => items[*i] = replacement,
                _ => {
                    fields.insert(name.clone(), ObsValue::Scalar(replacement));
                }
            }
            Observation::ToolResult(ToolResult {
                tool: result.tool,
                status: ToolStatus::Ok,
                fields,
            })
        }
        NoiseCategory::RedundantTool => {
            let mut fields = result.fields.clone();
            for i in 0..params.m {
                if stream.distractors.is_empty() {
                    break;
                }
                let idx = ((pick as usize).wrapping_add(i * 7919)) % stream.distractors.len();
                let (name, value) = &stream.distractors[idx];
                fields.insert(format!("{name}_{i}"), ObsValue::Scalar(value.clone()));
            }
            Observation::ToolResult(ToolResult {
                tool: result.tool,
                status: ToolStatus::Ok,
                fields,
            })
        }
        _ => unreachable!("user-side categories never reach the tool transform"),
    }
}

/// ceil((1 - s) * n): how many entries survive a truncation of severity `s`.
fn keep_count(n: usize, s: f64) -> usize {
    ((1.0 - s) * n as f64).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_domain, synthesize_task, DomainSize};

    #[test]
    fn keep_count_matches_hand_arithmetic() {
        assert_eq!(keep_count(4, 0.5), 2);
        assert_eq!(keep_count(4, 0.25), 3);
        assert_eq!(keep_count(3, 0.5), 2); // ceil(1.5)
        assert_eq!(keep_count(4, 1.0), 0);
        assert_eq!(keep_count(4, 0.0), 4);
    }

    #[test]
    fn probability_zero_is_identity() {
        let domain = build_domain(
            DomainSize {
                tools: 6,
                entity_kinds: 2,
                links: 1,
            },
            1,
        )
        .unwrap();
        let (task, db) = synthesize_task(&domain, 2, 3).unwrap();
        let mut env = EnvState::new(db.clone(), task.interaction_script.clone());
        let mut stream =
            NoiseStream::new(NoiseSpec::new(NoiseCategory::Failure, 0), 5, &domain, &db);
        let action = Action::ToolCall {
            tool: "get_k0".into(),
            grounding: BTreeMap::from([("id".to_string(), Value::str("K0-01"))]),
        };
        let obs = Observation::ToolResult(ToolResult {
            tool: "get_k0".into(),
            status: ToolStatus::Ok,
            fields: BTreeMap::from([("id".into(), ObsValue::Scalar(Value::str("K0-01")))]),
        });
        let out = perturb_tool_output(obs.clone(), &mut env, &mut stream, &action);
        assert_eq!(out, obs);
    }

    #[test]
    fn truncation_keeps_two_of_four_plus_marker() {
        let domain = build_domain(
            DomainSize {
                tools: 6,
                entity_kinds: 2,
                links: 1,
            },
            1,
        )
        .unwrap();
        let (task, db) = synthesize_task(&domain, 2, 3).unwrap();
        let mut env = EnvState::new(db.clone(), task.interaction_script.clone());
        // level 2 -> s = 0.5; force the draw to fire by scanning seeds
        let spec = NoiseSpec::new(NoiseCategory::Incomplete, 2);
        let action = Action::ToolCall {
            tool: "lookup_k0".into(),
            grounding: BTreeMap::from([("tag".to_string(), Value::str("t001"))]),
        };
        let items = vec![
            Value::str("K0-01"),
            Value::str("K0-02"),
            Value::str("K0-03"),
            Value::str("K0-04"),
        ];
        let obs = Observation::ToolResult(ToolResult {
            tool: "lookup_k0".into(),
            status: ToolStatus::Ok,
            fields: BTreeMap::from([("id".into(), ObsValue::List(items))]),
        });
        let mut fired_seed = None;
        for seed in 0..200 {
            let stream = NoiseStream::new(spec, seed, &domain, &db);
            if stream.decision(0).0 {
                fired_seed = Some(seed);
                break;
            }
        }
        let seed = fired_seed.expect("p=0.3 fires within 200 seeds");
        let mut stream = NoiseStream::new(spec, seed, &domain, &db);
        let out = perturb_tool_output(obs, &mut env, &mut stream, &action);
        match out {
            Observation::ToolResult(res) => match res.fields.get("id") {
                Some(ObsValue::List(items)) => {
                    assert_eq!(items.len(), 3, "2 kept + marker");
                    assert_eq!(items[2], Value::str(TRUNCATION_MARKER));
                }
                other => panic!("expected list, got {other:?}"),
            },
            other => panic!("expected tool result, got {other:?}"),
        }
    }

    /// Recoverability, exhaustively per tool-side category: a perturbed call
    /// followed by an identical retry yields the clean result.
    #[test]
    fn perturbed_call_plus_identical_retry_yields_truth() {
        use crate::env::{step, step_noisy, EnvState};

        let domain = build_domain(
            DomainSize {
                tools: 9,
                entity_kinds: 3,
                links: 2,
            },
            7,
        )
        .unwrap();
        let (task, db) = synthesize_task(&domain, 3, 3).unwrap();
        // exercise both a list-returning and a record-returning call
        let calls = [
            Action::ToolCall {
                tool: "lookup_k0".into(),
                grounding: BTreeMap::from([(
                    "tag".to_string(),
                    db.tables["k0"][0].get("tag").unwrap().clone(),
                )]),
            },
            Action::ToolCall {
                tool: "get_k0".into(),
                grounding: BTreeMap::from([(
                    "id".to_string(),
                    db.tables["k0"][0].get("id").unwrap().clone(),
                )]),
            },
        ];
        for category in [
            NoiseCategory::Failure,
            NoiseCategory::Incomplete,
            NoiseCategory::Misleading,
            NoiseCategory::RedundantTool,
        ] {
            for call in &calls {
                let spec = NoiseSpec::new(category, 3);
                // a seed whose first draw fires (p = 0.45)
                let seed = (0..500)
                    .find(|&s| NoiseStream::new(spec, s, &domain, &db).decision(0).0)
                    .expect("a firing seed exists");

                // clean reference observation
                let mut clean_env = EnvState::new(db.clone(), task.interaction_script.clone());
                let truth = step(&mut clean_env, &domain, call.clone()).unwrap();

                let mut env = EnvState::new(db.clone(), task.interaction_script.clone());
                let mut stream = NoiseStream::new(spec, seed, &domain, &db);
                let perturbed =
                    step_noisy(&mut env, &domain, call.clone(), Some(&mut stream)).unwrap();
                assert_ne!(
                    perturbed,
                    truth,
                    "{} draw must actually perturb {call}",
                    category.name()
                );
                let retried =
                    step_noisy(&mut env, &domain, call.clone(), Some(&mut stream)).unwrap();
                assert_eq!(
                    retried,
                    truth,
                    "{}: identical retry must return the true result",
                    category.name()
                );
            }
        }
    }

    #[test]
    fn decision_tape_is_deterministic() {
        let domain = build_domain(
            DomainSize {
                tools: 6,
                entity_kinds: 2,
                links: 1,
            },
            1,
        )
        .unwrap();
        let (_, db) = synthesize_task(&domain, 2, 3).unwrap();
        let spec = NoiseSpec::new(NoiseCategory::Misleading, 3);
        let a = NoiseStream::new(spec, 17, &domain, &db);
        let b = NoiseStream::new(spec, 17, &domain, &db);
        for ordinal in 0..64 {
            assert_eq!(a.decision(ordinal), b.decision(ordinal));
        }
    }
}
