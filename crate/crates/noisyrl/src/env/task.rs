//! Task synthesis: grounded tool chains, databases, scripts, verifier targets.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::domain::{DomainError, NOTE_POOL, STATE_POOL};
use super::types::{
    Database, DomainGraph, FieldKey, Record, ToolEffect, ToolSpec, Value, WriteValue,
};
use crate::seeding::{self, tags};

/// A fully grounded tool invocation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundedCall {
    pub tool: String,
    pub args: BTreeMap<String, Value>,
}

/// One scripted element of a user message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptSegment {
    /// Truthful slot reveal.
    Reveal { slot: FieldKey, value: Value },
    /// A decoy claim; observationally identical to a reveal.
    Decoy { slot: FieldKey, value: Value },
    /// The slot is deliberately not mentioned in this turn.
    Withhold { slot: FieldKey },
    /// Free-text filler.
    Distractor { text: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTurnSpec {
    pub segments: Vec<ScriptSegment>,
}

/// The user simulator's script: proactive turns plus the clarification
/// answers issued when the agent asks about a slot.
///
/// Invariant: truthful reveals across turns plus the clarification table
/// cover every goal slot, so a task is always informationally solvable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionScript {
    pub turns: Vec<UserTurnSpec>,
    pub clarification_table: BTreeMap<FieldKey, Value>,
}

impl InteractionScript {
    /// Slots truthfully revealed anywhere (turn reveals or clarifications).
    pub fn truthful_slots(&self) -> BTreeSet<FieldKey> {
        let mut out: BTreeSet<FieldKey> = self.clarification_table.keys().cloned().collect();
        for turn in &self.turns {
            for seg in &turn.segments {
                if let ScriptSegment::Reveal { slot, .. } = seg {
                    out.insert(slot.clone());
                }
            }
        }
        out
    }
}

/// A verifiable task. `target_state` is the database after replaying
/// `reference_chain` from the initial database; `required_reads` are the
/// read-only calls of the chain, which must be observed with an ok status for
/// the episode to count as solved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub goal_slots: BTreeMap<FieldKey, Value>,
    pub reference_chain: Vec<GroundedCall>,
    pub interaction_script: InteractionScript,
    pub target_state: Database,
    pub required_reads: BTreeSet<GroundedCall>,
}

impl TaskSpec {
    pub fn chain_length(&self) -> usize {
        self.reference_chain.len()
    }

    /// Default turn budget: generous enough for clarifications and retries,
    /// tight enough that aimless policies run out.
    pub fn default_turn_budget(&self) -> usize {
        3 * self.chain_length() + 6
    }

    /// The tool names of the reference chain, in order. This is the public
    /// part of the task statement (what the user is asking to have done);
    /// groundings and the target state stay hidden from the policy.
    pub fn requested_tools(&self) -> Vec<String> {
        self.reference_chain
            .iter()
            .map(|c| c.tool.clone())
            .collect()
    }
}

/// Replays a grounded chain against a database copy. Fails if any call does
/// not resolve to an existing record.
pub fn replay_chain(
    db: &Database,
    domain: &DomainGraph,
    chain: &[GroundedCall],
) -> Result<Database, String> {
    let mut db = db.clone();
    for call in chain {
        let tool = domain
            .tool(&call.tool)
            .ok_or_else(|| format!("unknown tool {}", call.tool))?;
        apply_call(&mut db, domain, tool, &call.args).map_err(|e| format!("{}: {e}", call.tool))?;
    }
    Ok(db)
}

/// Applies one grounded call, mutating `db` for write tools. Returns the
/// located record's id for diagnostics.
pub(crate) fn apply_call(
    db: &mut Database,
    domain: &DomainGraph,
    tool: &ToolSpec,
    args: &BTreeMap<String, Value>,
) -> Result<(), String> {
    let kind = tool.subject_kind().to_string();
    let schema = domain
        .schema(&kind)
        .ok_or_else(|| format!("unknown kind {kind}"))?;
    match &tool.effect {
        ToolEffect::ReadOnly => {
            let matched = db
                .tables
                .get(&kind)
                .map(|records| {
                    records.iter().any(|r| {
                        tool.arg_slots.iter().all(|(slot, key)| {
                            schema
                                .fields
                                .iter()
                                .find(|f| &f.key == key)
                                .and_then(|f| r.get(&f.name))
                                == args.get(slot)
                        })
                    })
                })
                .unwrap_or(false);
            if matched {
                Ok(())
            } else {
                Err("not_found".into())
            }
        }
        ToolEffect::Write { field, value, .. } => {
            let id_field = schema.id_field().name.clone();
            let id_slot = tool
                .arg_slots
                .iter()
                .find(|(_, key)| key == &schema.id_field().key)
                .map(|(slot, _)| slot.clone())
                .ok_or_else(|| format!("write tool {} has no id argument", tool.name))?;
            let id = args
                .get(&id_slot)
                .ok_or_else(|| format!("missing id argument {id_slot}"))?
                .clone();
            let new_value = match value {
                WriteValue::Arg { slot } => args
                    .get(slot)
                    .ok_or_else(|| format!("missing value argument {slot}"))?
                    .clone(),
                WriteValue::Const { value } => value.clone(),
            };
            let record = db
                .record_mut(&kind, &id_field, &id)
                .ok_or_else(|| "not_found".to_string())?;
            record.insert(field.clone(), new_value);
            Ok(())
        }
    }
}

struct ChainShape {
    start_kind: usize,
    hops: usize,
    use_lookup: bool,
    use_write: bool,
}

/// Synthesizes a verifiable task: populates a database, samples a
/// dependency-respecting chain of exactly `chain_length` grounded calls,
/// replays it into the target state, and emits a clean one-turn script
/// revealing every goal slot.
///
/// Deterministic in `(domain, chain_length, seed)`.
pub fn synthesize_task(
    domain: &DomainGraph,
    chain_length: usize,
    seed: u64,
) -> Result<(TaskSpec, Database), DomainError> {
    if !(2..=5).contains(&chain_length) {
        return Err(DomainError::ChainLength(chain_length));
    }
    let mut rng = seeding::rng_for(seed, &[tags::TASK, chain_length as u64]);
    let records_per_kind = 4;
    let db = populate_db(domain, records_per_kind, &mut rng);

    let shapes = feasible_shapes(domain, chain_length);
    if shapes.is_empty() {
        return Err(DomainError::NoChain(chain_length));
    }
    let shape = &shapes[rng.gen_range(0..shapes.len())];

    let kinds: Vec<&str> = domain
        .entity_schemas
        .iter()
        .map(|s| s.kind.as_str())
        .collect();

    // Walk the reference path through the database along foreign keys.
    let start_kind = kinds[shape.start_kind];
    let start_records = &db.tables[start_kind];
    let start = start_records.choose(&mut rng).unwrap().clone();
    let mut path = vec![(shape.start_kind, start)];
    for _ in 0..shape.hops {
        let (ki, rec) = path.last().unwrap();
        let next_id = rec.get("ref").expect("linked kind has a ref field").clone();
        let next_kind = kinds[ki + 1];
        let next = db
            .record(next_kind, "id", &next_id)
            .expect("ref points at an existing record")
            .clone();
        path.push((ki + 1, next));
    }

    let mut chain = Vec::new();
    let mut goal_slots = BTreeMap::new();
    let (_, first) = &path[0];
    if shape.use_lookup {
        let tag = first.get("tag").unwrap().clone();
        let slot = FieldKey::new(start_kind, "tag");
        goal_slots.insert(slot.clone(), tag.clone());
        chain.push(GroundedCall {
            tool: format!("lookup_{start_kind}"),
            args: BTreeMap::from([("tag".to_string(), tag)]),
        });
    } else {
        let id = first.get("id").unwrap().clone();
        goal_slots.insert(FieldKey::new(start_kind, "id"), id);
    }
    for (ki, rec) in &path {
        chain.push(GroundedCall {
            tool: format!("get_{}", kinds[*ki]),
            args: BTreeMap::from([("id".to_string(), rec.get("id").unwrap().clone())]),
        });
    }
    if shape.use_write {
        let (ki, rec) = path.last().unwrap();
        let kind = kinds[*ki];
        let set_tool = domain
            .tools
            .iter()
            .find(|t| t.effect.is_write() && t.subject_kind() == kind)
            .expect("shape feasibility implies a write tool");
        let field = match &set_tool.effect {
            ToolEffect::Write { field, .. } => field.clone(),
            ToolEffect::ReadOnly => unreachable!(),
        };
        let current = rec.get(&field).unwrap();
        let pool: Vec<Value> = field_pool(&field)
            .iter()
            .map(|s| Value::str(*s))
            .filter(|v| v != current)
            .collect();
        let new_value = pool[rng.gen_range(0..pool.len())].clone();
        goal_slots.insert(FieldKey::new(kind, &field), new_value.clone());
        chain.push(GroundedCall {
            tool: set_tool.name.clone(),
            args: BTreeMap::from([
                ("id".to_string(), rec.get("id").unwrap().clone()),
                (field, new_value),
            ]),
        });
    }
    debug_assert_eq!(chain.len(), chain_length);

    let target_state = replay_chain(&db, domain, &chain).expect("reference chain replays cleanly");
    let required_reads: BTreeSet<GroundedCall> = chain
        .iter()
        .filter(|c| {
            domain
                .tool(&c.tool)
                .map(|t| !t.effect.is_write())
                .unwrap_or(false)
        })
        .cloned()
        .collect();

    // Clean script: one turn revealing every goal slot, in chain order;
    // every slot is also answerable via clarification.
    let segments = goal_slots
        .iter()
        .map(|(slot, value)| ScriptSegment::Reveal {
            slot: slot.clone(),
            value: value.clone(),
        })
        .collect();
    let interaction_script = InteractionScript {
        turns: vec![UserTurnSpec { segments }],
        clarification_table: goal_slots.clone(),
    };

    let task = TaskSpec {
        task_id: format!("task-{seed:08x}-c{chain_length}"),
        goal_slots,
        reference_chain: chain,
        interaction_script,
        target_state,
        required_reads,
    };
    Ok((task, db))
}

fn field_pool(field: &str) -> &'static [&'static str] {
    match field {
        "state" => &STATE_POOL,
        "note" => &NOTE_POOL,
        _ => &STATE_POOL,
    }
}

/// Enumerates every (start kind, hop count, lookup?, write?) combination
/// whose chain has exactly the requested length and whose tools exist.
fn feasible_shapes(domain: &DomainGraph, chain_length: usize) -> Vec<ChainShape> {
    let kinds: Vec<&str> = domain
        .entity_schemas
        .iter()
        .map(|s| s.kind.as_str())
        .collect();
    let has = |name: &str| domain.tool(name).is_some();
    let mut shapes = Vec::new();
    for start in 0..kinds.len() {
        for hops in 0..kinds.len() - start {
            // every kind along the path must be readable and linked
            let gets_ok = (start..=start + hops).all(|i| has(&format!("get_{}", kinds[i])));
            let links_ok = (start..start + hops).all(|i| {
                domain
                    .schema(kinds[i])
                    .map(|s| s.field("ref").is_some())
                    .unwrap_or(false)
            });
            if !gets_ok || !links_ok {
                continue;
            }
            for use_lookup in [false, true] {
                if use_lookup && !has(&format!("lookup_{}", kinds[start])) {
                    continue;
                }
                for use_write in [false, true] {
                    if use_write {
                        let terminal = kinds[start + hops];
                        let writable = domain
                            .tools
                            .iter()
                            .any(|t| t.effect.is_write() && t.subject_kind() == terminal);
                        if !writable {
                            continue;
                        }
                    }
                    let len = usize::from(use_lookup) + (hops + 1) + usize::from(use_write);
                    if len == chain_length {
                        shapes.push(ChainShape {
                            start_kind: start,
                            hops,
                            use_lookup,
                            use_write,
                        });
                    }
                }
            }
        }
    }
    // Prefer chains that end in a write so target states actually differ
    // from the initial database whenever the domain allows it.
    if shapes.iter().any(|s| s.use_write) {
        shapes.retain(|s| s.use_write);
    }
    shapes
}

fn populate_db(domain: &DomainGraph, records_per_kind: usize, rng: &mut impl Rng) -> Database {
    let mut db = Database::default();
    let kinds: Vec<String> = domain
        .entity_schemas
        .iter()
        .map(|s| s.kind.clone())
        .collect();
    // Seed tables back to front so ref fields can point at existing records.
    for (i, schema) in domain.entity_schemas.iter().enumerate().rev() {
        let mut records = Vec::new();
        for r in 0..records_per_kind {
            let mut rec = Record::new();
            for field in &schema.fields {
                let value = match field.name.as_str() {
                    "id" => Value::str(format!("{}-{:02}", kinds[i].to_uppercase(), r + 1)),
                    // tags are unique per record so lookups resolve to a
                    // single id
                    "tag" => Value::str(format!("t{}{:02}", i, r + 1)),
                    "state" => Value::str(STATE_POOL[rng.gen_range(0..STATE_POOL.len())]),
                    "note" => Value::str(NOTE_POOL[rng.gen_range(0..NOTE_POOL.len())]),
                    "ref" => {
                        let next = &db.tables[&kinds[i + 1]];
                        next[rng.gen_range(0..next.len())]
                            .get("id")
                            .unwrap()
                            .clone()
                    }
                    other => Value::str(format!("{other}-{r}")),
                };
                rec.insert(field.name.clone(), value);
            }
            records.push(rec);
        }
        db.tables.insert(schema.kind.clone(), records);
    }
    db
}
