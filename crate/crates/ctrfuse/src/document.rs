//! Versioned JSON architecture documents and Graphviz export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use ctrfuse_core::architecture::{ArchitectureDescriptor, Metadata, OpChoice};
use ctrfuse_core::fusion::{ComponentGraph, FusionOp};
use ctrfuse_core::Error as CoreError;

use crate::error::{CliError, Result};

pub const ARCHITECTURE_FORMAT: &str = "ctrfuse-architecture";
pub const ARCHITECTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureDocument {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub with_s0: bool,
    pub components: Vec<ComponentEntry>,
    pub edges: Vec<EdgeEntry>,
    pub operations: Vec<OperationEntry>,
    #[serde(default)]
    pub dead_components: Vec<usize>,
    pub metadata: MetadataEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentEntry {
    pub id: usize,
    pub name: String,
    pub kind: String,
    pub level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationEntry {
    pub component: usize,
    /// Set for hard choices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
    /// Set for soft choices, keyed by operation name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataEntry {
    pub seed: u64,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl ArchitectureDocument {
    pub fn from_descriptor(desc: &ArchitectureDescriptor, config_hash: Option<&str>) -> Self {
        let graph = desc.graph();
        let components = graph
            .components()
            .iter()
            .map(|c| ComponentEntry {
                id: c.id,
                name: c.name.clone(),
                kind: c.kind.name().to_string(),
                level: c.level,
            })
            .collect();
        let edges = desc
            .edges()
            .into_iter()
            .map(|(from, to)| EdgeEntry { from, to })
            .collect();
        let operations = graph
            .fusion_capable()
            .map(|id| {
                let choice = desc.operation(id).expect("fusion-capable");
                match *choice {
                    OpChoice::Hard(op) => OperationEntry {
                        component: id,
                        op: Some(op.name().to_string()),
                        probabilities: None,
                    },
                    OpChoice::Soft(p) => OperationEntry {
                        component: id,
                        op: None,
                        probabilities: Some(
                            FusionOp::ALL
                                .iter()
                                .map(|op| (op.name().to_string(), p[op.index()]))
                                .collect(),
                        ),
                    },
                }
            })
            .collect();
        ArchitectureDocument {
            format: ARCHITECTURE_FORMAT.to_string(),
            version: ARCHITECTURE_VERSION,
            n: desc.n(),
            with_s0: desc.with_s0(),
            components,
            edges,
            operations,
            dead_components: desc.dead_components(),
            metadata: MetadataEntry {
                seed: desc.metadata.seed,
                dataset: desc.metadata.dataset.clone(),
                stage: desc.metadata.stage.clone(),
                config_hash: config_hash.map(str::to_string),
            },
        }
    }

    /// Checks the document against the component graph it declares and
    /// builds the descriptor. `source` names the document in errors.
    pub fn to_descriptor(&self, source: &str) -> Result<ArchitectureDescriptor> {
        let schema = |at: String, message: String| CliError::schema(source, at, message);
        if self.format != ARCHITECTURE_FORMAT {
            return Err(schema(
                "format".into(),
                format!("expected {ARCHITECTURE_FORMAT:?}, found {:?}", self.format),
            ));
        }
        if self.version != ARCHITECTURE_VERSION {
            return Err(schema(
                "version".into(),
                format!(
                    "unsupported version {}, expected {ARCHITECTURE_VERSION}",
                    self.version
                ),
            ));
        }
        let graph = ComponentGraph::new(self.n, self.with_s0)
            .map_err(|e| schema("n".into(), e.to_string()))?;
        if self.components.len() != graph.len() {
            return Err(schema(
                "components".into(),
                format!(
                    "expected {} components, found {}",
                    graph.len(),
                    self.components.len()
                ),
            ));
        }
        for (i, (entry, c)) in self.components.iter().zip(graph.components()).enumerate() {
            if entry.id != c.id
                || entry.name != c.name
                || entry.kind != c.kind.name()
                || entry.level != c.level
            {
                return Err(schema(
                    format!("components[{i}]"),
                    format!(
                        "expected {{id: {}, name: {}, kind: {}, level: {}}}",
                        c.id,
                        c.name,
                        c.kind.name(),
                        c.level
                    ),
                ));
            }
        }
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e.from, e.to)).collect();
        for (i, &(from, to)) in edges.iter().enumerate() {
            if from >= graph.len() || to >= graph.len() {
                return Err(schema(
                    format!("edges[{i}]"),
                    format!("component id out of range (size {})", graph.len()),
                ));
            }
            if !graph.allows(from, to) {
                return Err(CliError::Core(CoreError::LevelConstraint { from, to }));
            }
        }
        let mut operations: Vec<Option<OpChoice>> = vec![None; graph.num_fusion_capable()];
        for (i, entry) in self.operations.iter().enumerate() {
            let at = format!("operations[{i}]");
            let column = graph.fusion_column(entry.component).ok_or_else(|| {
                schema(
                    format!("{at}.component"),
                    "not a fusion-capable component".into(),
                )
            })?;
            let choice = match (&entry.op, &entry.probabilities) {
                (Some(name), None) => {
                    OpChoice::Hard(FusionOp::from_name(name).ok_or_else(|| {
                        schema(format!("{at}.op"), format!("unknown operation {name:?}"))
                    })?)
                }
                (None, Some(probs)) => {
                    let mut p = [0.0; 4];
                    for (name, &v) in probs {
                        let op = FusionOp::from_name(name).ok_or_else(|| {
                            schema(
                                format!("{at}.probabilities.{name}"),
                                "unknown operation".into(),
                            )
                        })?;
                        p[op.index()] = v;
                    }
                    OpChoice::Soft(p)
                }
                _ => {
                    return Err(schema(
                        at,
                        "exactly one of `op` and `probabilities` is required".into(),
                    ))
                }
            };
            if operations[column].replace(choice).is_some() {
                return Err(schema(
                    format!("{at}.component"),
                    "duplicate operation entry".into(),
                ));
            }
        }
        let operations = operations
            .into_iter()
            .enumerate()
            .map(|(col, o)| {
                o.ok_or_else(|| {
                    schema(
                        "operations".into(),
                        format!("missing entry for component {}", col + 1),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let metadata = Metadata {
            seed: self.metadata.seed,
            dataset: self.metadata.dataset.clone(),
            stage: self.metadata.stage.clone(),
        };
        ArchitectureDescriptor::new(self.n, self.with_s0, &edges, operations, metadata).map_err(
            |e| match e {
                CoreError::LevelConstraint { .. } => CliError::Core(e),
                other => schema("operations".into(), other.to_string()),
            },
        )
    }
}

pub fn to_json(desc: &ArchitectureDescriptor, config_hash: Option<&str>) -> String {
    let mut s =
        serde_json::to_string_pretty(&ArchitectureDocument::from_descriptor(desc, config_hash))
            .expect("documents always serialize");
    s.push('\n');
    s
}

/// Parses a document, reporting the JSON path of the first structural error.
pub fn from_json(
    text: &str,
    source: &str,
) -> Result<(ArchitectureDescriptor, ArchitectureDocument)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ArchitectureDocument = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::schema(source, e.path().to_string(), e.inner().to_string()))?;
    let desc = doc.to_descriptor(source)?;
    Ok((desc, doc))
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz digraph: one node per component in id order, labelled with its
/// kind and operation, then one line per edge in `(from, to)` order. Dead
/// components are dashed.
pub fn export_dot(desc: &ArchitectureDescriptor) -> String {
    let graph = desc.graph();
    let dead = desc.dead_components();
    let mut out = String::new();
    out.push_str("digraph architecture {\n  rankdir=BT;\n  node [shape=box];\n");
    for c in graph.components() {
        let op = match desc.operation(c.id) {
            None => String::new(),
            Some(OpChoice::Hard(op)) => format!("\\n{op}"),
            Some(choice @ OpChoice::Soft(p)) => {
                let op = choice.dominant();
                format!("\\n{op} ({:.3})", p[op.index()])
            }
        };
        let style = if dead.contains(&c.id) {
            ", style=dashed"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  c{} [label=\"{} ({})\\nlevel {}{}\"{}];",
            c.id,
            dot_escape(&c.name),
            c.kind.name(),
            c.level,
            op,
            style
        );
    }
    for (from, to) in desc.edges() {
        let _ = writeln!(out, "  c{from} -> c{to};");
    }
    out.push_str("}\n");
    out
}
