use serde::{Deserialize, Serialize};

use super::{EdgeId, SuperGraph};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Killed because their variance fell to the entropy threshold.
    pub entropy: Vec<EdgeId>,
    /// Killed because their source lost all incoming flow.
    pub cascade: Vec<EdgeId>,
    /// Kept alive to preserve one input→output path.
    pub restored: Vec<EdgeId>,
    /// True when input and output would otherwise be disconnected.
    pub degenerate: bool,
}

impl PruneReport {
    pub fn total(&self) -> usize {
        self.entropy.len() + self.cascade.len()
    }
}

/// Alive edges whose variance is at or below `threshold`.
pub fn entropy_prune_mask(graph: &SuperGraph, threshold: f64) -> Vec<EdgeId> {
    graph
        .alive_edges()
        .filter(|(_, e)| e.gamma <= threshold)
        .map(|(id, _)| id)
        .collect()
}

/// Kills, to a fixpoint, every alive edge leaving a non-input node without
/// alive incoming edges. Returns the killed edges in kill order.
pub fn propagate_dependency_prune(graph: &mut SuperGraph) -> Vec<EdgeId> {
    let mut killed = Vec::new();
    loop {
        let mut has_inflow = vec![false; graph.num_nodes];
        has_inflow[graph.input] = true;
        for e in graph.edges.iter().filter(|e| e.alive) {
            has_inflow[e.to] = true;
        }
        let before = killed.len();
        for (id, e) in graph.edges.iter_mut().enumerate() {
            if e.alive && !has_inflow[e.from] {
                e.alive = false;
                killed.push(id);
            }
        }
        if killed.len() == before {
            return killed;
        }
    }
}

/// Kills, to a fixpoint, every alive edge whose target has no alive path to
/// the output. Such edges cannot affect the output, so they carry neither
/// gradient nor curvature and would otherwise never fall below threshold.
pub fn prune_dead_ends(graph: &mut SuperGraph) -> Vec<EdgeId> {
    let mut killed = Vec::new();
    loop {
        let mut has_outflow = vec![false; graph.num_nodes];
        has_outflow[graph.output] = true;
        for e in graph.edges.iter().filter(|e| e.alive) {
            has_outflow[e.from] = true;
        }
        let before = killed.len();
        for (id, e) in graph.edges.iter_mut().enumerate() {
            if e.alive && !has_outflow[e.to] {
                e.alive = false;
                killed.push(id);
            }
        }
        if killed.len() == before {
            return killed;
        }
    }
}

fn output_reached(graph: &SuperGraph) -> bool {
    let mut reached = vec![false; graph.num_nodes];
    reached[graph.input] = true;
    let mut order: Vec<&super::Edge> = graph.edges.iter().filter(|e| e.alive).collect();
    order.sort_by_key(|e| e.from);
    for e in order {
        if reached[e.from] {
            reached[e.to] = true;
        }
    }
    reached[graph.output]
}

/// Input→output path through `candidates` maximizing the smallest variance on it.
fn widest_path(graph: &SuperGraph, candidates: &[bool]) -> Option<Vec<EdgeId>> {
    let mut best = vec![f64::NEG_INFINITY; graph.num_nodes];
    let mut via: Vec<Option<EdgeId>> = vec![None; graph.num_nodes];
    best[graph.input] = f64::INFINITY;
    let mut order: Vec<EdgeId> = (0..graph.edges.len()).filter(|&i| candidates[i]).collect();
    order.sort_by_key(|&i| (graph.edges[i].from, i));
    for id in order {
        let e = &graph.edges[id];
        if best[e.from] == f64::NEG_INFINITY {
            continue;
        }
        let width = best[e.from].min(e.gamma);
        if width > best[e.to] {
            best[e.to] = width;
            via[e.to] = Some(id);
        }
    }
    via[graph.output]?;
    let mut path = Vec::new();
    let mut node = graph.output;
    while node != graph.input {
        let id = via[node]?;
        path.push(id);
        node = graph.edges[id].from;
    }
    path.reverse();
    Some(path)
}

/// Entropy pruning followed by the dependency cascade. When the output would
/// be cut off, the widest previously-alive path is kept and the report is
/// flagged degenerate.
pub fn prune_step(graph: &mut SuperGraph, threshold: f64) -> PruneReport {
    let before = graph.alive_mask();
    let entropy = entropy_prune_mask(graph, threshold);
    for &id in &entropy {
        graph.edges[id].alive = false;
    }
    let cascade = propagate_dependency_prune(graph);
    let mut report = PruneReport {
        entropy,
        cascade,
        ..PruneReport::default()
    };
    if !output_reached(graph) {
        report.degenerate = true;
        if let Some(path) = widest_path(graph, &before) {
            for &id in &path {
                graph.edges[id].alive = true;
            }
            report.entropy.retain(|id| !path.contains(id));
            report.cascade.retain(|id| !path.contains(id));
            report.restored = path;
            // Edges that the cascade removed may be fed again by the restored path;
            // pruning stays one-way, so only the path itself is revived.
            report.cascade.extend(propagate_dependency_prune(graph));
        }
    }
    report
}
