//! Architecture and mask artifacts: JSON and DOT.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayes::{LayerMask, Network};
use crate::error::{Error, Result};
use crate::graph::{ArchExport, OpKind, SuperGraph, SCHEMA_VERSION};
use crate::nn::Layer;

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_arch_json(path: &Path) -> Result<ArchExport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Graphviz rendering: alive edges solid, pruned edges dashed.
pub fn to_dot(graph: &SuperGraph) -> String {
    let mut out = String::from("digraph supergraph {\n  rankdir=LR;\n");
    for node in 0..graph.num_nodes {
        let role = if node == graph.input {
            " (input)"
        } else if node == graph.output {
            " (output)"
        } else if graph.is_gate_node(node) {
            " (gate)"
        } else {
            ""
        };
        writeln!(out, "  n{node} [label=\"{node}{role}\"];").expect("string write");
    }
    for (id, e) in graph.edges.iter().enumerate() {
        let style = if e.alive { "solid" } else { "dashed" };
        let label = if e.op == OpKind::ZeroGateIdentity {
            format!("e{id} gate")
        } else {
            format!("e{id} {} w={:.3} γ={:.3}", e.op.name(), e.scale, e.gamma)
        };
        writeln!(out, "  n{} -> n{} [label=\"{label}\", style={style}];", e.from, e.to).expect("string write");
    }
    out.push_str("}\n");
    out
}

pub fn write_dot(graph: &SuperGraph, path: &Path) -> Result<()> {
    fs::write(path, to_dot(graph)).map_err(|e| Error::io(path, e))
}

/// Compressed network: parameters, zero-masks and surviving widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskExport {
    pub schema_version: String,
    pub network: Network,
    pub layers: Vec<Layer>,
    /// One entry per layer; `None` for layers without weights.
    pub masks: Vec<Option<LayerMask>>,
    pub widths: Vec<usize>,
    pub surviving_params: usize,
    pub total_params: usize,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

impl MaskExport {
    pub fn new(network: Network, layers: Vec<Layer>, masks: Vec<Option<LayerMask>>, widths: Vec<usize>, surviving: usize, total: usize) -> Self {
        MaskExport {
            schema_version: SCHEMA_VERSION.to_string(),
            network,
            layers,
            masks,
            widths,
            surviving_params: surviving,
            total_params: total,
            config_hash: None,
            seed: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let export: MaskExport = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if export.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: format!("schema version {} is not {SCHEMA_VERSION}", export.schema_version),
            });
        }
        if export.masks.len() != export.layers.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: format!("{} masks for {} layers", export.masks.len(), export.layers.len()),
            });
        }
        Ok(export)
    }
}
