use super::{EdgeId, NodeId, OpKind, SuperGraph};
use crate::error::{Error, Result};

/// Entropy pruning boundary: `½ ln(2πeγ) ≤ 0` ⇔ `γ ≤ 1/(2πe)`.
pub const PRUNE_THRESHOLD: f64 = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E);

/// `(Σ 1/t)⁻¹`; any zero term switches the combination off.
pub fn harmonic(terms: &[f64]) -> Result<f64> {
    let mut inv = 0.0;
    for &t in terms {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Hyper(format!("variance term {t} must be finite and non-negative")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        inv += 1.0 / t;
    }
    if terms.is_empty() {
        return Err(Error::Hyper("harmonic combination of no terms".into()));
    }
    Ok(1.0 / inv)
}

/// Total switch variance flowing into `node`, or `None` for sources.
fn inflow(graph: &SuperGraph, node: NodeId) -> Option<f64> {
    if graph.is_source(node) {
        return None;
    }
    Some(
        graph
            .edges
            .iter()
            .filter(|e| e.alive && e.to == node && e.op != OpKind::ZeroGateIdentity)
            .map(|e| e.switch)
            .sum(),
    )
}

/// Dependency variance of an edge: harmonic combination of the guarding gate's
/// switch, the switch mass entering the source node and the edge's own switch.
pub fn gamma_of_edge(graph: &SuperGraph, id: EdgeId) -> Result<f64> {
    let edge = graph
        .edges
        .get(id)
        .ok_or_else(|| Error::Graph(format!("edge {id} does not exist")))?;
    let mut terms = Vec::with_capacity(3);
    let origin = if edge.op == OpKind::ZeroGateIdentity {
        edge.from
    } else {
        match graph.gate_sources().get(&edge.from) {
            Some(&original) => {
                let gate = graph.gates[&original];
                let gate_edge = &graph.edges[gate];
                terms.push(if gate_edge.alive { gate_edge.switch } else { 0.0 });
                original
            }
            None => edge.from,
        }
    };
    if let Some(mass) = inflow(graph, origin) {
        terms.push(mass);
    }
    terms.push(edge.switch);
    harmonic(&terms)
}

/// Refreshes `gamma` on every alive edge from the current switches.
pub fn recompute_gammas(graph: &mut SuperGraph) -> Result<()> {
    let values: Vec<(EdgeId, f64)> = graph
        .alive_edges()
        .map(|(id, _)| id)
        .collect::<Vec<_>>()
        .into_iter()
        .map(|id| gamma_of_edge(graph, id).map(|g| (id, g)))
        .collect::<Result<_>>()?;
    for (id, g) in values {
        graph.edges[id].gamma = g;
    }
    Ok(())
}
