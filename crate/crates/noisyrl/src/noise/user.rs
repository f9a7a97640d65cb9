//! User-side noise: perturbs the interaction script before the episode
//! starts. The task objective (goal slots, target state) is never touched —
//! only how and whether the user communicates it.

use std::collections::BTreeSet;

use rand::Rng;

use crate::env::InteractionScript;
use crate::env::{Database, DomainGraph, FieldKey, ScriptSegment, UserTurnSpec, Value};
use crate::seeding::{self, tags};

use super::{NoiseCategory, NoiseDraw, NoiseError, NoiseRealization, NoiseSide, NoiseSpec};

/// Applies one user-side category to a script. Deterministic in
/// `(script, spec, seed)`; the returned realization records every choice.
///
/// - `Ambiguous`: withholds anomaly-count goal reveals from the turns and
///   moves them into the clarification table (the agent must ask).
/// - `Inconsistent`: prefixes decoy claims for goal slots; the original
///   reveals that follow act as corrections, so the latest stated value is
///   always the true one.
/// - `Redundant`: inserts distractor claims — one same-slot decoy ahead of
///   the truth, the rest on unrelated slots — plus filler text.
/// - `OutOfScope`: inserts requests for capabilities no tool provides.
pub fn perturb_interaction(
    script: &InteractionScript,
    spec: NoiseSpec,
    seed: u64,
    domain: &DomainGraph,
    db: &Database,
) -> Result<(InteractionScript, NoiseRealization), NoiseError> {
    if spec.side() != NoiseSide::User {
        return Err(NoiseError::WrongSide {
            category: spec.category,
            expected: NoiseSide::User,
            got: spec.side(),
        });
    }
    let mut realization = NoiseRealization::new(spec, seed);
    let params = spec.params();
    if params.m == 0 {
        return Ok((script.clone(), realization));
    }
    let mut rng = seeding::rng_for(
        seed,
        &[tags::NOISE, spec.category as u64, spec.level as u64],
    );
    let mut out = script.clone();

    // goal slots as revealed by the script, in first-reveal order
    let mut revealed: Vec<(usize, usize, FieldKey, Value)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (ti, turn) in script.turns.iter().enumerate() {
        for (si, seg) in turn.segments.iter().enumerate() {
            if let ScriptSegment::Reveal { slot, value } = seg {
                if seen.insert(slot.clone()) {
                    revealed.push((ti, si, slot.clone(), value.clone()));
                }
            }
        }
    }

    if matches!(
        spec.category,
        NoiseCategory::Ambiguous | NoiseCategory::Inconsistent
    ) && params.m > revealed.len()
    {
        return Err(NoiseError::TooManyAnomalies {
            requested: params.m,
            available: revealed.len(),
        });
    }

    match spec.category {
        NoiseCategory::Ambiguous => {
            // withhold the chosen slots; answers stay available on request
            let mut indices: Vec<usize> = (0..revealed.len()).collect();
            for k in 0..params.m {
                let pick = k + rng.gen_range(0..indices.len() - k);
                indices.swap(k, pick);
            }
            for &i in indices.iter().take(params.m) {
                let (ti, si, slot, value) = &revealed[i];
                out.turns[*ti].segments[*si] = ScriptSegment::Withhold { slot: slot.clone() };
                out.clarification_table.insert(slot.clone(), value.clone());
                realization.draw_log.push(NoiseDraw::Script {
                    anomaly: i,
                    detail: format!("withheld {slot}"),
                });
            }
        }
        NoiseCategory::Inconsistent => {
            let mut decoys = Vec::new();
            for k in 0..params.m {
                let (_, _, slot, truth) = &revealed[k % revealed.len()];
                let decoy =
                    decoy_value(domain, db, slot, truth, &mut rng).unwrap_or_else(|| truth.clone());
                realization.draw_log.push(NoiseDraw::Script {
                    anomaly: k,
                    detail: format!("decoy {slot}={decoy}"),
                });
                decoys.push(ScriptSegment::Decoy {
                    slot: slot.clone(),
                    value: decoy,
                });
            }
            out.turns.insert(0, UserTurnSpec { segments: decoys });
        }
        NoiseCategory::Redundant => {
            let non_goal: Vec<FieldKey> = domain
                .field_keys()
                .into_iter()
                .filter(|k| !seen.contains(k))
                .collect();
            for k in 0..params.m {
                if k == 0 && !revealed.is_empty() {
                    // one plausible same-slot distractor, placed ahead of the
                    // truthful reveal so it never reads as a correction
                    let (ti, si, slot, truth) = &revealed[0];
                    if let Some(decoy) = decoy_value(domain, db, slot, truth, &mut rng) {
                        out.turns[*ti].segments.insert(
                            *si,
                            ScriptSegment::Decoy {
                                slot: slot.clone(),
                                value: decoy.clone(),
                            },
                        );
                        realization.draw_log.push(NoiseDraw::Script {
                            anomaly: k,
                            detail: format!("redundant {slot}={decoy}"),
                        });
                        continue;
                    }
                }
                // unrelated entity chatter
                let detail = if non_goal.is_empty() {
                    let text = format!("(also mentions item {k} of no relevance)");
                    append_segment(
                        &mut out,
                        k,
                        ScriptSegment::Distractor { text: text.clone() },
                    );
                    text
                } else {
                    let key = &non_goal[rng.gen_range(0..non_goal.len())];
                    let pool = db.pool(&domain.entity_schemas, key);
                    if pool.is_empty() {
                        let text = format!("(mentions {key} with no known value)");
                        append_segment(
                            &mut out,
                            k,
                            ScriptSegment::Distractor { text: text.clone() },
                        );
                        text
                    } else {
                        let value = pool[rng.gen_range(0..pool.len())].clone();
                        append_segment(
                            &mut out,
                            k,
                            ScriptSegment::Distractor {
                                text: format!("by the way, {key} {value} is not part of this"),
                            },
                        );
                        format!("mention {key}={value}")
                    }
                };
                realization
                    .draw_log
                    .push(NoiseDraw::Script { anomaly: k, detail });
            }
        }
        NoiseCategory::OutOfScope => {
            const VERBS: [&str; 4] = ["escalate", "expedite", "gift_wrap", "price_match"];
            for k in 0..params.m {
                let verb = VERBS[rng.gen_range(0..VERBS.len())];
                let kind =
                    &domain.entity_schemas[rng.gen_range(0..domain.entity_schemas.len())].kind;
                let capability = format!("{verb}_{kind}");
                debug_assert!(domain.tool(&capability).is_none());
                append_segment(
                    &mut out,
                    k,
                    ScriptSegment::Distractor {
                        text: format!("could you also {capability}? it would help a lot"),
                    },
                );
                realization.draw_log.push(NoiseDraw::Script {
                    anomaly: k,
                    detail: format!("out_of_scope {capability}"),
                });
            }
        }
        _ => unreachable!("tool-side categories rejected above"),
    }

    Ok((out, realization))
}

fn append_segment(script: &mut InteractionScript, anomaly: usize, seg: ScriptSegment) {
    let ti = anomaly % script.turns.len().max(1);
    if script.turns.is_empty() {
        script.turns.push(UserTurnSpec {
            segments: vec![seg],
        });
    } else {
        script.turns[ti].segments.push(seg);
    }
}

/// A type-valid value for `slot` different from `truth`, drawn from the
/// values the initial database actually contains.
fn decoy_value(
    domain: &DomainGraph,
    db: &Database,
    slot: &FieldKey,
    truth: &Value,
    rng: &mut impl Rng,
) -> Option<Value> {
    let pool: Vec<Value> = db
        .pool(&domain.entity_schemas, slot)
        .into_iter()
        .filter(|v| v != truth)
        .collect();
    if pool.is_empty() {
        None
    } else {
        Some(pool[rng.gen_range(0..pool.len())].clone())
    }
}
