//! Episode state and transition semantics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::task::{InteractionScript, ScriptSegment, TaskSpec};
use super::types::{
    Action, Database, DomainGraph, FieldKey, ObsValue, Observation, ToolEffect, ToolResult,
    ToolStatus, Value,
};

/// Bookkeeping consumed by the noise layer: calls that have already been
/// perturbed once (and are therefore served truthfully from then on) and the
/// cursor into the per-episode perturbation tape.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseFlags {
    pub exempt: BTreeSet<String>,
    pub draw_cursor: u64,
}

/// One history entry. Scripted user turns carry no agent action; everything
/// else is an (action, observation) pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HistoryEvent {
    User {
        observation: Observation,
    },
    Agent {
        action: Action,
        observation: Observation,
    },
}

impl HistoryEvent {
    pub fn observation(&self) -> &Observation {
        match self {
            HistoryEvent::User { observation } => observation,
            HistoryEvent::Agent { observation, .. } => observation,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("episode already terminated")]
    Terminated,
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("grounding for {tool} must cover exactly its argument slots")]
    BadGrounding { tool: String },
}

/// Full environment state of one episode. Instances are independent; cloning
/// the initial state gives parallel rollouts nothing to share.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub db: Database,
    pub history: Vec<HistoryEvent>,
    pub script: InteractionScript,
    pub script_cursor: usize,
    pub pending_noise: NoiseFlags,
    pub terminated: bool,
}

impl EnvState {
    pub fn new(db: Database, script: InteractionScript) -> Self {
        EnvState {
            db,
            history: Vec::new(),
            script,
            script_cursor: 0,
            pending_noise: NoiseFlags::default(),
            terminated: false,
        }
    }

    pub fn turn_index(&self) -> usize {
        self.history.len()
    }

    pub fn last_observation(&self) -> Option<&Observation> {
        self.history.last().map(|e| e.observation())
    }

    /// Number of agent actions taken so far.
    pub fn actions_taken(&self) -> usize {
        self.history
            .iter()
            .filter(|e| matches!(e, HistoryEvent::Agent { .. }))
            .count()
    }

    /// Slots for which some user claim (truthful or decoy) has been observed.
    pub fn claimed_slots(&self) -> BTreeSet<FieldKey> {
        let mut out = BTreeSet::new();
        for event in &self.history {
            if let Observation::UserMessage { claims, .. } = event.observation() {
                for (slot, _) in claims {
                    out.insert(slot.clone());
                }
            }
        }
        out
    }

    /// Latest user-claimed value per slot (later claims shadow earlier ones,
    /// which is how corrections win over decoys).
    pub fn latest_claims(&self) -> BTreeMap<FieldKey, Value> {
        let mut out = BTreeMap::new();
        for event in &self.history {
            if let Observation::UserMessage { claims, .. } = event.observation() {
                for (slot, value) in claims {
                    out.insert(slot.clone(), value.clone());
                }
            }
        }
        out
    }

    /// Latest value seen in an ok tool result, per typed slot.
    pub fn latest_result_values(&self, domain: &DomainGraph) -> BTreeMap<FieldKey, Value> {
        let mut out = BTreeMap::new();
        for event in &self.history {
            if let Observation::ToolResult(res) = event.observation() {
                if !res.status.is_ok() {
                    continue;
                }
                let Some(tool) = domain.tool(&res.tool) else {
                    continue;
                };
                for (name, obs_value) in &res.fields {
                    if let Some(key) = domain.result_field_key(tool, name) {
                        for v in obs_value.values() {
                            out.insert(key.clone(), v.clone());
                        }
                    }
                }
            }
        }
        out
    }

    /// Every value observed so far, grouped by typed slot: user claims plus
    /// ok tool-result fields. This is the pool candidate groundings are
    /// assembled from.
    pub fn observed_values(&self, domain: &DomainGraph) -> BTreeMap<FieldKey, BTreeSet<Value>> {
        let mut pool: BTreeMap<FieldKey, BTreeSet<Value>> = BTreeMap::new();
        for event in &self.history {
            match event.observation() {
                Observation::UserMessage { claims, .. } => {
                    for (slot, value) in claims {
                        pool.entry(slot.clone()).or_default().insert(value.clone());
                    }
                }
                Observation::ToolResult(res) if res.status.is_ok() => {
                    if let Some(tool) = domain.tool(&res.tool) {
                        for (name, obs_value) in &res.fields {
                            if let Some(key) = domain.result_field_key(tool, name) {
                                for v in obs_value.values() {
                                    pool.entry(key.clone()).or_default().insert(v.clone());
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        pool
    }

    /// Ok-completion counts per grounded call key.
    pub fn completed_call_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for event in &self.history {
            if let HistoryEvent::Agent {
                action,
                observation: Observation::ToolResult(res),
            } = event
            {
                if res.status.is_ok() {
                    if let Some(key) = action.call_key() {
                        *out.entry(key).or_insert(0) += 1;
                    }
                }
            }
        }
        out
    }

    pub fn last_agent_action(&self) -> Option<&Action> {
        self.history.iter().rev().find_map(|e| match e {
            HistoryEvent::Agent { action, .. } => Some(action),
            _ => None,
        })
    }
}

/// Emits the next scripted user message and advances the cursor; after
/// exhaustion the user is silent and no history entry is recorded.
pub fn user_turn(env: &mut EnvState) -> Observation {
    if env.script_cursor >= env.script.turns.len() {
        return Observation::Silence;
    }
    let turn = env.script.turns[env.script_cursor].clone();
    env.script_cursor += 1;
    let mut text = Vec::new();
    let mut claims = Vec::new();
    for seg in turn.segments {
        match seg {
            ScriptSegment::Reveal { slot, value } | ScriptSegment::Decoy { slot, value } => {
                claims.push((slot, value));
            }
            ScriptSegment::Withhold { .. } => {}
            ScriptSegment::Distractor { text: t } => text.push(t),
        }
    }
    let obs = Observation::UserMessage { text, claims };
    env.history.push(HistoryEvent::User {
        observation: obs.clone(),
    });
    obs
}

/// Executes one agent action. Tool errors such as a grounding that matches no
/// record are legal observations (`status = error "not_found"`), not crashes;
/// only malformed actions or stepping a terminated episode are errors.
pub fn step(
    env: &mut EnvState,
    domain: &DomainGraph,
    action: Action,
) -> Result<Observation, StepError> {
    step_noisy(env, domain, action, None)
}

/// [`step`] with an optional tool-noise session. Ok tool results flow through
/// the perturbation; when a transient-failure perturbation fires on a write,
/// the database effect is reverted — a failed call is a call that never ran.
pub fn step_noisy(
    env: &mut EnvState,
    domain: &DomainGraph,
    action: Action,
    noise: Option<&mut crate::noise::NoiseStream>,
) -> Result<Observation, StepError> {
    if env.terminated {
        return Err(StepError::Terminated);
    }
    let is_write_call = match &action {
        Action::ToolCall { tool, .. } => domain
            .tool(tool)
            .map(|t| t.effect.is_write())
            .unwrap_or(false),
        _ => false,
    };
    let snapshot = if noise.is_some() && is_write_call {
        Some(env.db.clone())
    } else {
        None
    };
    let observation = execute(env, domain, &action)?;
    let observation = match noise {
        Some(stream) => {
            let perturbed = crate::noise::perturb_tool_output(observation, env, stream, &action);
            if perturbed.is_tool_error() {
                if let Some(db) = snapshot {
                    env.db = db;
                }
            }
            perturbed
        }
        None => observation,
    };
    env.history.push(HistoryEvent::Agent {
        action,
        observation: observation.clone(),
    });
    Ok(observation)
}

fn execute(
    env: &mut EnvState,
    domain: &DomainGraph,
    action: &Action,
) -> Result<Observation, StepError> {
    Ok(match action {
        Action::ToolCall { tool, grounding } => {
            let spec = domain
                .tool(tool)
                .ok_or_else(|| StepError::UnknownTool(tool.clone()))?;
            let slots: BTreeSet<&String> = spec.arg_slots.iter().map(|(s, _)| s).collect();
            let given: BTreeSet<&String> = grounding.keys().collect();
            if slots != given {
                return Err(StepError::BadGrounding { tool: tool.clone() });
            }
            Observation::ToolResult(execute_tool(env, domain, spec, grounding))
        }
        Action::AskUser { slot } => match env.script.clarification_table.get(slot) {
            Some(value) => Observation::UserMessage {
                text: Vec::new(),
                claims: vec![(slot.clone(), value.clone())],
            },
            None => Observation::Silence,
        },
        Action::Finish => {
            env.terminated = true;
            Observation::Silence
        }
    })
}

fn execute_tool(
    env: &mut EnvState,
    domain: &DomainGraph,
    spec: &super::types::ToolSpec,
    grounding: &BTreeMap<String, Value>,
) -> ToolResult {
    let kind = spec.subject_kind().to_string();
    let schema = domain.schema(&kind).expect("tool subject kind declared");
    let not_found = ToolResult {
        tool: spec.name.clone(),
        status: ToolStatus::Error("not_found".into()),
        fields: BTreeMap::new(),
    };

    match &spec.effect {
        ToolEffect::ReadOnly => {
            let records = match env.db.tables.get(&kind) {
                Some(r) => r,
                None => return not_found,
            };
            let matches: Vec<&super::types::Record> = records
                .iter()
                .filter(|r| {
                    spec.arg_slots.iter().all(|(slot, key)| {
                        schema
                            .fields
                            .iter()
                            .find(|f| &f.key == key)
                            .and_then(|f| r.get(&f.name))
                            == grounding.get(slot)
                    })
                })
                .collect();
            if matches.is_empty() {
                return not_found;
            }
            let mut fields = BTreeMap::new();
            if spec.returns_list {
                let ids: Vec<Value> = matches
                    .iter()
                    .filter_map(|r| r.get(&schema.id_field().name).cloned())
                    .collect();
                fields.insert(schema.id_field().name.clone(), ObsValue::List(ids));
            } else {
                for name in &spec.result_schema {
                    if let Some(v) = matches[0].get(name) {
                        fields.insert(name.clone(), ObsValue::Scalar(v.clone()));
                    }
                }
            }
            ToolResult {
                tool: spec.name.clone(),
                status: ToolStatus::Ok,
                fields,
            }
        }
        ToolEffect::Write { .. } => {
            match super::task::apply_call(&mut env.db, domain, spec, grounding) {
                Ok(()) => {
                    // report back from the updated record
                    let id_slot = spec
                        .arg_slots
                        .iter()
                        .find(|(_, key)| key == &schema.id_field().key)
                        .map(|(slot, _)| slot.clone())
                        .expect("write tools carry an id argument");
                    let id = grounding.get(&id_slot).unwrap();
                    let record = env
                        .db
                        .record(&kind, &schema.id_field().name, id)
                        .expect("write located the record");
                    let mut fields = BTreeMap::new();
                    for name in &spec.result_schema {
                        if let Some(v) = record.get(name) {
                            fields.insert(name.clone(), ObsValue::Scalar(v.clone()));
                        }
                    }
                    ToolResult {
                        tool: spec.name.clone(),
                        status: ToolStatus::Ok,
                        fields,
                    }
                }
                Err(_) => not_found,
            }
        }
    }
}

/// Grounding cap per tool. Candidate groundings are enumerated in
/// lexicographic order and truncated here, which bounds the action space and
/// makes tie-breaking deterministic.
pub const MAX_GROUNDINGS_PER_TOOL: usize = 8;

/// The candidate action set: every grounding assembled from observed values
/// (capped per tool), one AskUser per goal slot not yet claimed, and Finish.
pub fn enumerate_actions(env: &EnvState, domain: &DomainGraph) -> Vec<Action> {
    let pool = env.observed_values(domain);
    let claimed = env.claimed_slots();
    let mut out = Vec::new();

    for tool in &domain.tools {
        let per_slot: Vec<Vec<&Value>> = tool
            .arg_slots
            .iter()
            .map(|(_, key)| {
                pool.get(key)
                    .map(|vs| vs.iter().collect::<Vec<_>>())
                    .unwrap_or_default()
            })
            .collect();
        if per_slot.iter().any(|vs| vs.is_empty()) {
            continue;
        }
        let mut counters = vec![0usize; per_slot.len()];
        let mut emitted = 0;
        'product: loop {
            let grounding: BTreeMap<String, Value> = tool
                .arg_slots
                .iter()
                .enumerate()
                .map(|(pos, (slot, _))| (slot.clone(), per_slot[pos][counters[pos]].clone()))
                .collect();
            out.push(Action::ToolCall {
                tool: tool.name.clone(),
                grounding,
            });
            emitted += 1;
            if emitted >= MAX_GROUNDINGS_PER_TOOL {
                break;
            }
            // lexicographic increment, last slot fastest
            let mut pos = counters.len();
            loop {
                if pos == 0 {
                    break 'product;
                }
                pos -= 1;
                counters[pos] += 1;
                if counters[pos] < per_slot[pos].len() {
                    break;
                }
                counters[pos] = 0;
            }
        }
    }

    for slot in env.script.clarification_table.keys() {
        if !claimed.contains(slot) {
            out.push(Action::AskUser { slot: slot.clone() });
        }
    }
    out.push(Action::Finish);
    out
}

/// Scores a finished episode: 1 iff the database matches the target state
/// exactly, every required read was observed with ok status, and the agent
/// issued Finish (the turn budget is enforced by the episode driver).
pub fn verify(env: &EnvState, task: &TaskSpec) -> u8 {
    if !env.terminated {
        return 0;
    }
    if env.db != task.target_state {
        return 0;
    }
    for read in &task.required_reads {
        let seen = env.history.iter().any(|e| match e {
            HistoryEvent::Agent {
                action: Action::ToolCall { tool, grounding },
                observation: Observation::ToolResult(res),
            } => tool == &read.tool && grounding == &read.args && res.status.is_ok(),
            _ => false,
        });
        if !seen {
            return 0;
        }
    }
    1
}
