use std::collections::BTreeSet;

use super::{Edge, OpKind, SuperGraph};
use crate::error::{Error, Result};

/// Inserts one zero gate per node with outgoing operations: node `i` gains a
/// companion `i'` reached by a single identity edge, and every operation that
/// left `i` now leaves `i'`. Node ids are renumbered to stay topological.
pub fn insert_zero_gates(graph: &SuperGraph) -> Result<SuperGraph> {
    if !graph.gates.is_empty() || graph.edges.iter().any(|e| e.op == OpKind::ZeroGateIdentity) {
        return Err(Error::Graph("zero gates already inserted".into()));
    }
    let gated: BTreeSet<usize> = graph.edges.iter().map(|e| e.from).collect();
    let mut renamed = vec![0; graph.num_nodes];
    let mut gate_node = vec![None; graph.num_nodes];
    let mut shapes = Vec::with_capacity(graph.num_nodes + gated.len());
    for node in 0..graph.num_nodes {
        renamed[node] = shapes.len();
        shapes.push(graph.node_shapes[node].clone());
        if gated.contains(&node) {
            gate_node[node] = Some(shapes.len());
            shapes.push(graph.node_shapes[node].clone());
        }
    }
    let mut out = SuperGraph::new(shapes, renamed[graph.input], renamed[graph.output]);
    out.cell_inputs = graph.cell_inputs.iter().map(|&n| renamed[n]).collect();
    for edge in &graph.edges {
        let mut e = edge.clone();
        e.from = gate_node[edge.from].expect("source of an edge is gated");
        e.to = renamed[edge.to];
        out.edges.push(e);
    }
    for &node in &gated {
        let id = out.edges.len();
        out.edges.push(Edge::new(
            renamed[node],
            gate_node[node].expect("gated"),
            OpKind::ZeroGateIdentity,
            None,
        ));
        out.gates.insert(renamed[node], id);
    }
    Ok(out)
}
