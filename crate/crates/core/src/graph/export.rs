use serde::{Deserialize, Serialize};

use super::{Edge, OpKind, SuperGraph};
use crate::error::{Error, Result};
use crate::nn::Layer;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchEdge {
    /// Edge id in the searched supergraph.
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub op: OpKind,
    #[serde(rename = "w")]
    pub scale: f64,
    pub gamma: f64,
    #[serde(rename = "s")]
    pub switch: f64,
    pub gate: bool,
    pub layer: Option<Layer>,
}

/// Serializable record of the alive part of a searched graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchExport {
    pub schema_version: String,
    pub node_shapes: Vec<Vec<usize>>,
    pub input: usize,
    pub output: usize,
    pub cell_inputs: Vec<usize>,
    pub edges: Vec<ArchEdge>,
    /// Total edges before pruning.
    pub searched_edges: usize,
    pub degenerate: bool,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

pub fn export_architecture(graph: &SuperGraph) -> ArchExport {
    let gate_ids: Vec<usize> = graph.gates.values().copied().collect();
    let edges: Vec<ArchEdge> = graph
        .alive_edges()
        .map(|(id, e)| ArchEdge {
            id,
            from: e.from,
            to: e.to,
            op: e.op,
            scale: e.scale,
            gamma: e.gamma,
            switch: e.switch,
            gate: gate_ids.contains(&id),
            layer: e.layer.clone(),
        })
        .collect();
    let degenerate = !edges.iter().any(|e| e.to == graph.output);
    ArchExport {
        schema_version: SCHEMA_VERSION.to_string(),
        node_shapes: graph.node_shapes.clone(),
        input: graph.input,
        output: graph.output,
        cell_inputs: graph.cell_inputs.clone(),
        edges,
        searched_edges: graph.edges.len(),
        degenerate,
        config_hash: None,
        seed: None,
    }
}

/// Rebuilds the pruned graph; only exported (alive) edges are present.
pub fn import_architecture(arch: &ArchExport) -> Result<SuperGraph> {
    if arch.schema_version != SCHEMA_VERSION {
        return Err(Error::Graph(format!(
            "unsupported schema version {:?}",
            arch.schema_version
        )));
    }
    let mut graph = SuperGraph::new(arch.node_shapes.clone(), arch.input, arch.output);
    graph.cell_inputs = arch.cell_inputs.clone();
    for ae in &arch.edges {
        let needs_layer = !matches!(ae.op, OpKind::Identity | OpKind::ZeroGateIdentity);
        if needs_layer != ae.layer.is_some() {
            return Err(Error::Graph(format!("edge {}: op {} and layer disagree", ae.id, ae.op.name())));
        }
        let mut e = Edge::new(ae.from, ae.to, ae.op, ae.layer.clone());
        e.scale = ae.scale;
        e.gamma = ae.gamma;
        e.switch = ae.switch;
        let id = graph.add_edge(e)?;
        if ae.gate {
            graph.gates.insert(ae.from, id);
        }
    }
    Ok(graph)
}
