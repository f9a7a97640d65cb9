//! Value, schema, tool, and observation types shared across the environment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// A scalar database value. Ordering is derived (integers before strings),
/// which gives every value set a stable lexicographic order for candidate
/// enumeration and fixture serialization.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            Value::Int(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

/// A value as it appears in a tool result: scalar or list. Lists exist so
/// search-style tools can return multiple matches (and so truncation noise
/// has something to truncate); the database itself stores only scalars.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObsValue {
    Scalar(Value),
    List(Vec<Value>),
}

impl ObsValue {
    /// All scalar values carried, excluding the truncation sentinel.
    pub fn values(&self) -> Vec<&Value> {
        match self {
            ObsValue::Scalar(v) => vec![v],
            ObsValue::List(vs) => vs
                .iter()
                .filter(|v| v.as_str() != Some(crate::noise::TRUNCATION_MARKER))
                .collect(),
        }
    }
}

/// Identifies a typed field slot as `"<kind>.<field>"`. Goal slots, tool
/// argument slots and entity fields all share this key space, so a value
/// observed anywhere can ground any argument of the same key.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldKey(pub String);

impl FieldKey {
    pub fn new(kind: &str, field: &str) -> Self {
        FieldKey(format!("{kind}.{field}"))
    }

    pub fn kind(&self) -> &str {
        self.0.split_once('.').map(|(k, _)| k).unwrap_or(&self.0)
    }

    pub fn field(&self) -> &str {
        self.0.split_once('.').map(|(_, f)| f).unwrap_or(&self.0)
    }
}

impl fmt::Display for FieldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One declared field of an entity kind. `key` is the typed slot the field's
/// values belong to; for foreign-key fields it points at another kind's id
/// slot, which is what makes cross-entity tool chains groundable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub key: FieldKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySchema {
    pub kind: String,
    pub fields: Vec<FieldDef>,
}

impl EntitySchema {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// The id field is always the first declared field.
    pub fn id_field(&self) -> &FieldDef {
        &self.fields[0]
    }
}

/// How a write tool derives the new field value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum WriteValue {
    /// Copy the value of the named argument slot.
    Arg { slot: String },
    /// A fixed literal.
    Const { value: Value },
}

/// Declarative tool effect. Writes are idempotent by construction: they set a
/// field to a value, so replaying the same grounded call cannot drift state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolEffect {
    ReadOnly,
    Write {
        entity_kind: String,
        field: String,
        value: WriteValue,
    },
}

impl ToolEffect {
    pub fn is_write(&self) -> bool {
        matches!(self, ToolEffect::Write { .. })
    }
}

/// A tool API. The first argument slot determines the subject entity kind the
/// tool operates on. Read-only tools treat all arguments as filters; write
/// tools locate the record by its id argument and treat the rest as inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    /// (slot name, typed slot). Slot names reuse the field-key string.
    pub arg_slots: Vec<(String, FieldKey)>,
    pub effect: ToolEffect,
    /// Field names of the subject kind returned on success.
    pub result_schema: Vec<String>,
    /// Search tools return the matching ids as a list instead of a single
    /// record's fields.
    pub returns_list: bool,
}

impl ToolSpec {
    pub fn subject_kind(&self) -> &str {
        self.arg_slots[0].1.kind()
    }
}

pub type Record = BTreeMap<String, Value>;

/// Tables of records keyed by entity kind. Record ids are unique per table
/// and every schema field is present in every record.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Database {
    pub tables: BTreeMap<String, Vec<Record>>,
}

impl Database {
    pub fn record(&self, kind: &str, id_field: &str, id: &Value) -> Option<&Record> {
        self.tables
            .get(kind)?
            .iter()
            .find(|r| r.get(id_field) == Some(id))
    }

    pub fn record_mut(&mut self, kind: &str, id_field: &str, id: &Value) -> Option<&mut Record> {
        self.tables
            .get_mut(kind)?
            .iter_mut()
            .find(|r| r.get(id_field) == Some(id))
    }

    /// Every value stored under the given typed slot, across all tables.
    /// This is the pool "valid values of the same type" are drawn from.
    pub fn pool(&self, schemas: &[EntitySchema], key: &FieldKey) -> Vec<Value> {
        let mut out = BTreeSet::new();
        for schema in schemas {
            for field in &schema.fields {
                if &field.key == key {
                    if let Some(records) = self.tables.get(&schema.kind) {
                        for r in records {
                            if let Some(v) = r.get(&field.name) {
                                out.insert(v.clone());
                            }
                        }
                    }
                }
            }
        }
        out.into_iter().collect()
    }
}

/// The domain graph: tool APIs, entity schemas, and dependency edges
/// (an edge `(a, b)` means tool `a`'s output can ground one of `b`'s
/// arguments). The graph is acyclic over those edges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainGraph {
    pub tools: Vec<ToolSpec>,
    pub entity_schemas: Vec<EntitySchema>,
    pub dependency_edges: Vec<(String, String)>,
}

impl DomainGraph {
    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn schema(&self, kind: &str) -> Option<&EntitySchema> {
        self.entity_schemas.iter().find(|s| s.kind == kind)
    }

    /// All typed slots declared by any entity field, sorted.
    pub fn field_keys(&self) -> Vec<FieldKey> {
        let mut keys = BTreeSet::new();
        for s in &self.entity_schemas {
            for f in &s.fields {
                keys.insert(f.key.clone());
            }
        }
        keys.into_iter().collect()
    }

    /// Resolves a result field name of `tool` to its typed slot.
    pub fn result_field_key(&self, tool: &ToolSpec, field_name: &str) -> Option<FieldKey> {
        let schema = self.schema(tool.subject_kind())?;
        schema.field(field_name).map(|f| f.key.clone())
    }
}

/// An agent action.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall {
        tool: String,
        grounding: BTreeMap<String, Value>,
    },
    AskUser {
        slot: FieldKey,
    },
    Finish,
}

impl Action {
    /// Canonical string form, used as the key for noise exemption flags.
    pub fn call_key(&self) -> Option<String> {
        match self {
            Action::ToolCall { tool, grounding } => {
                let args: Vec<String> = grounding.iter().map(|(k, v)| format!("{k}={v}")).collect();
                Some(format!("{tool}({})", args.join(",")))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ToolCall { .. } => write!(f, "{}", self.call_key().unwrap()),
            Action::AskUser { slot } => write!(f, "ask({slot})"),
            Action::Finish => write!(f, "finish"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error(String),
}

impl ToolStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ToolStatus::Ok)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub status: ToolStatus,
    /// Empty when status is an error.
    pub fields: BTreeMap<String, ObsValue>,
}

/// What the agent observes after an event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Observation {
    UserMessage {
        /// Free-text distractor segments, verbatim.
        text: Vec<String>,
        /// Structured slot claims. Decoy claims look exactly like truthful
        /// ones; the agent cannot tell them apart at observation time.
        claims: Vec<(FieldKey, Value)>,
    },
    ToolResult(ToolResult),
    Silence,
}

impl Observation {
    pub fn is_tool_ok(&self) -> bool {
        matches!(self, Observation::ToolResult(r) if r.status.is_ok())
    }

    pub fn is_tool_error(&self) -> bool {
        matches!(self, Observation::ToolResult(r) if !r.status.is_ok())
    }
}
