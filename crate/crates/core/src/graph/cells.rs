use std::collections::BTreeMap;

use super::{GroupId, NodeId, SuperGraph};
use crate::error::{Error, Result};

/// Chains `cells` copies of `template` (input node 0, output node last),
/// sharing boundary nodes. Copies of template edge `i` form group `i`.
pub fn stack_cells(template: &SuperGraph, cells: usize) -> Result<SuperGraph> {
    let n = template.num_nodes;
    if cells == 0 || template.input != 0 || template.output + 1 != n {
        return Err(Error::Graph(
            "cell template needs input node 0, output node last and at least one cell".into(),
        ));
    }
    if template.node_shapes[0] != template.node_shapes[n - 1] {
        return Err(Error::Graph("cell input and output shapes differ".into()));
    }
    let stride = n - 1;
    let total = cells * stride + 1;
    let shapes = (0..total).map(|v| template.node_shapes[v % stride].clone()).collect();
    let mut out = SuperGraph::new(shapes, 0, total - 1);
    out.cell_inputs = (1..cells).map(|c| c * stride).collect();
    for c in 0..cells {
        let offset = c * stride;
        for (i, edge) in template.edges.iter().enumerate() {
            let mut e = edge.clone();
            e.from += offset;
            e.to += offset;
            e.group = Some(i);
            let id = out.add_edge(e)?;
            if let Some((&node, _)) = template.gates.iter().find(|(_, &g)| g == i) {
                out.gates.insert(node + offset, id);
            }
        }
    }
    Ok(out)
}

/// Members of every group must share op kind and count, and tie one slot per cell.
pub fn validate_groups(graph: &SuperGraph) -> Result<BTreeMap<GroupId, Vec<usize>>> {
    let mut groups: BTreeMap<GroupId, Vec<usize>> = BTreeMap::new();
    for (id, e) in graph.edges.iter().enumerate() {
        match e.group {
            Some(g) => groups.entry(g).or_default().push(id),
            None => return Err(Error::Graph(format!("edge {id} has no group"))),
        }
    }
    let size = groups.values().next().map_or(0, Vec::len);
    for (g, members) in &groups {
        if members.len() != size {
            return Err(Error::Graph(format!(
                "group {g} has {} members, expected {size}",
                members.len()
            )));
        }
        let first = &graph.edges[members[0]];
        let span = |from: NodeId, to: NodeId| to - from;
        for &m in members {
            let e = &graph.edges[m];
            if e.op != first.op || span(e.from, e.to) != span(first.from, first.to) {
                return Err(Error::Graph(format!(
                    "group {g}: edge {m} ({}, {}→{}) does not match edge {} ({}, {}→{})",
                    e.op.name(),
                    e.from,
                    e.to,
                    members[0],
                    first.op.name(),
                    first.from,
                    first.to
                )));
            }
        }
    }
    Ok(groups)
}
