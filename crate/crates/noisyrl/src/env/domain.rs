//! Procedural domain construction.

use thiserror::Error;

use super::types::{
    DomainGraph, EntitySchema, FieldDef, FieldKey, ToolEffect, ToolSpec, WriteValue,
};
use crate::seeding::{self, tags};
use rand::Rng;

/// Requested domain shape: total tool count, entity kinds, and cross-entity
/// reference links (kind i carries a foreign key into kind i+1 for the first
/// `links` kinds).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DomainSize {
    pub tools: usize,
    pub entity_kinds: usize,
    pub links: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error(
        "domain needs at least one tool and one entity kind, got {tools} tools / {kinds} kinds"
    )]
    EmptyDomain { tools: usize, kinds: usize },
    #[error("{links} links requested but {kinds} entity kinds admit at most {max}")]
    TooManyLinks {
        links: usize,
        kinds: usize,
        max: usize,
    },
    #[error("no dependency-respecting chain of length {0} exists in this domain")]
    NoChain(usize),
    #[error("chain length {0} outside the supported range [2, 5]")]
    ChainLength(usize),
}

/// Mutable-field pools. Values are deliberately small closed sets so decoy
/// and corruption draws always have type-valid alternatives.
pub(crate) const STATE_POOL: [&str; 4] = ["new", "open", "hold", "done"];
pub(crate) const NOTE_POOL: [&str; 3] = ["none", "gift", "rush"];

/// Builds a domain graph: entity schemas with typed fields, one lookup / get /
/// set tool family per kind (emitted in priority order until the requested
/// tool count is reached), and the derived dependency edges.
///
/// Deterministic in `(size, seed)`.
pub fn build_domain(size: DomainSize, seed: u64) -> Result<DomainGraph, DomainError> {
    if size.tools == 0 || size.entity_kinds == 0 {
        return Err(DomainError::EmptyDomain {
            tools: size.tools,
            kinds: size.entity_kinds,
        });
    }
    let max_links = size.entity_kinds - 1;
    if size.links > max_links {
        return Err(DomainError::TooManyLinks {
            links: size.links,
            kinds: size.entity_kinds,
            max: max_links,
        });
    }

    let mut rng = seeding::rng_for(seed, &[tags::DOMAIN]);
    let kinds: Vec<String> = (0..size.entity_kinds).map(|i| format!("k{i}")).collect();

    let mut schemas = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        let mut fields = vec![
            FieldDef {
                name: "id".into(),
                key: FieldKey::new(kind, "id"),
            },
            FieldDef {
                name: "tag".into(),
                key: FieldKey::new(kind, "tag"),
            },
            FieldDef {
                name: "state".into(),
                key: FieldKey::new(kind, "state"),
            },
            FieldDef {
                name: "note".into(),
                key: FieldKey::new(kind, "note"),
            },
        ];
        if i < size.links {
            fields.push(FieldDef {
                name: "ref".into(),
                key: FieldKey::new(&kinds[i + 1], "id"),
            });
        }
        schemas.push(EntitySchema {
            kind: kind.clone(),
            fields,
        });
    }

    // Tool families in priority order: get tools make kinds readable, set
    // tools make tasks verifiable by mutation, lookups add an indirection
    // level. Round-robin over kinds inside each family.
    let mut tools = Vec::new();
    let writable: Vec<&str> = kinds
        .iter()
        .map(|_| if rng.gen_bool(0.5) { "state" } else { "note" })
        .collect();
    'outer: for family in 0..3 {
        for (i, kind) in kinds.iter().enumerate() {
            if tools.len() == size.tools {
                break 'outer;
            }
            let schema = &schemas[i];
            let tool = match family {
                0 => ToolSpec {
                    name: format!("get_{kind}"),
                    arg_slots: vec![("id".into(), FieldKey::new(kind, "id"))],
                    effect: ToolEffect::ReadOnly,
                    // tag is excluded so lookups are never groundable from a
                    // get result, which keeps the dependency graph acyclic.
                    result_schema: schema
                        .fields
                        .iter()
                        .map(|f| f.name.clone())
                        .filter(|n| n != "tag")
                        .collect(),
                    returns_list: false,
                },
                1 => {
                    let field = writable[i];
                    ToolSpec {
                        name: format!("set_{kind}_{field}"),
                        arg_slots: vec![
                            ("id".into(), FieldKey::new(kind, "id")),
                            (field.into(), FieldKey::new(kind, field)),
                        ],
                        effect: ToolEffect::Write {
                            entity_kind: kind.clone(),
                            field: field.into(),
                            value: WriteValue::Arg { slot: field.into() },
                        },
                        result_schema: vec![field.into()],
                        returns_list: false,
                    }
                }
                _ => ToolSpec {
                    name: format!("lookup_{kind}"),
                    arg_slots: vec![("tag".into(), FieldKey::new(kind, "tag"))],
                    effect: ToolEffect::ReadOnly,
                    result_schema: vec!["id".into()],
                    returns_list: true,
                },
            };
            tools.push(tool);
        }
    }

    let dependency_edges = derive_edges(&tools, &schemas);
    let graph = DomainGraph {
        tools,
        entity_schemas: schemas,
        dependency_edges,
    };
    debug_assert!(edges_acyclic(&graph));
    Ok(graph)
}

/// An edge (a, b) exists when some result field of `a` has the same typed
/// slot as some argument of `b`. Self-edges are excluded.
fn derive_edges(tools: &[ToolSpec], schemas: &[EntitySchema]) -> Vec<(String, String)> {
    let mut edges = Vec::new();
    for a in tools {
        let schema = schemas.iter().find(|s| s.kind == a.subject_kind()).unwrap();
        let out_keys: Vec<&FieldKey> = a
            .result_schema
            .iter()
            .filter_map(|n| schema.field(n).map(|f| &f.key))
            .collect();
        for b in tools {
            if a.name == b.name {
                continue;
            }
            if b.arg_slots.iter().any(|(_, k)| out_keys.contains(&k)) {
                edges.push((a.name.clone(), b.name.clone()));
            }
        }
    }
    edges
}

fn edges_acyclic(graph: &DomainGraph) -> bool {
    // Kahn's algorithm over tool names.
    let mut indeg: std::collections::BTreeMap<&str, usize> =
        graph.tools.iter().map(|t| (t.name.as_str(), 0)).collect();
    for (_, b) in &graph.dependency_edges {
        *indeg.get_mut(b.as_str()).unwrap() += 1;
    }
    let mut queue: Vec<&str> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut seen = 0;
    while let Some(n) = queue.pop() {
        seen += 1;
        for (a, b) in &graph.dependency_edges {
            if a == n {
                let d = indeg.get_mut(b.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push(b);
                }
            }
        }
    }
    seen == graph.tools.len()
}

/// Validates the full set of type invariants on a constructed graph. Used by
/// tests and by fixture loading.
pub(crate) fn validate_domain(graph: &DomainGraph) -> Result<(), String> {
    let mut names = std::collections::BTreeSet::new();
    for t in &graph.tools {
        if !names.insert(&t.name) {
            return Err(format!("duplicate tool name {}", t.name));
        }
        if t.arg_slots.is_empty() {
            return Err(format!("tool {} has no argument slots", t.name));
        }
        if let ToolEffect::Write {
            entity_kind, field, ..
        } = &t.effect
        {
            let schema = graph
                .schema(entity_kind)
                .ok_or_else(|| format!("tool {} writes unknown kind {entity_kind}", t.name))?;
            if schema.field(field).is_none() {
                return Err(format!("tool {} writes unknown field {field}", t.name));
            }
        }
        // Every argument slot must be groundable from an entity field or
        // another tool's output; entity fields already cover both cases here.
        for (slot, key) in &t.arg_slots {
            let declared = graph
                .entity_schemas
                .iter()
                .any(|s| s.fields.iter().any(|f| &f.key == key));
            if !declared {
                return Err(format!(
                    "arg {slot} of {} has ungroundable key {key}",
                    t.name
                ));
            }
        }
    }
    if !edges_acyclic(graph) {
        return Err("dependency edges contain a cycle".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_requested_shape() {
        let g = build_domain(
            DomainSize {
                tools: 3,
                entity_kinds: 2,
                links: 1,
            },
            7,
        )
        .unwrap();
        assert_eq!(g.tools.len(), 3);
        assert_eq!(g.entity_schemas.len(), 2);
        validate_domain(&g).unwrap();
    }

    #[test]
    fn single_read_only_tool_domain() {
        let g = build_domain(
            DomainSize {
                tools: 1,
                entity_kinds: 1,
                links: 0,
            },
            0,
        )
        .unwrap();
        assert_eq!(g.tools.len(), 1);
        assert_eq!(g.tools[0].effect, ToolEffect::ReadOnly);
        assert!(g.dependency_edges.is_empty());
        validate_domain(&g).unwrap();
    }

    #[test]
    fn deterministic_in_size_and_seed() {
        let size = DomainSize {
            tools: 9,
            entity_kinds: 3,
            links: 2,
        };
        assert_eq!(
            build_domain(size, 11).unwrap(),
            build_domain(size, 11).unwrap()
        );
    }

    #[test]
    fn rejects_impossible_shapes() {
        assert!(matches!(
            build_domain(
                DomainSize {
                    tools: 0,
                    entity_kinds: 1,
                    links: 0
                },
                0
            ),
            Err(DomainError::EmptyDomain { .. })
        ));
        assert!(matches!(
            build_domain(
                DomainSize {
                    tools: 2,
                    entity_kinds: 1,
                    links: 1
                },
                0
            ),
            Err(DomainError::TooManyLinks { .. })
        ));
    }

    #[test]
    fn edges_respect_groundability() {
        let g = build_domain(
            DomainSize {
                tools: 9,
                entity_kinds: 3,
                links: 2,
            },
            3,
        )
        .unwrap();
        // lookup grounds get within a kind; get grounds the next kind's get.
        assert!(g
            .dependency_edges
            .contains(&("lookup_k0".into(), "get_k0".into())));
        assert!(g
            .dependency_edges
            .contains(&("get_k0".into(), "get_k1".into())));
        // no edge may point back from a set tool into a get.
        assert!(!g
            .dependency_edges
            .iter()
            .any(|(a, b)| a.starts_with("set_") && b.starts_with("get_")));
    }
}
