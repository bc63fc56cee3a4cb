//! Curvature of the energy w.r.t. the architecture scalars `w`.

use super::chain::{diag_step, loss_hessian_seed, loss_hessian_seed_diag};
use super::HessianMode;
use crate::error::{Error, Result};
use crate::graph::{GraphCache, GraphGrads, SuperGraph};
use crate::nn::EnergyKind;
use crate::tensor::Tensor;

/// Per-edge `∂²E/∂w²` (zero for dead edges). Needs a forward pass in `cache`
/// and the matching reverse pass in `grads`.
///
/// Exact mode pushes second-order forward jets from each edge to the output.
/// Approximate mode runs the diagonal recursion over nodes, weighting each
/// incoming edge by `w²`, and scores an edge by `Σ_f (mean_b |B|)² · mean_b H`.
pub fn arch_scalar_hessian(
    graph: &SuperGraph,
    cache: &GraphCache,
    grads: &GraphGrads,
    kind: EnergyKind,
    mode: HessianMode,
) -> Result<Vec<f64>> {
    match mode {
        HessianMode::Exact => exact(graph, cache, grads, kind),
        HessianMode::Approx => approx(graph, cache, kind),
    }
}

fn node_shaped(t: Tensor, graph: &SuperGraph, node: usize) -> Result<Tensor> {
    let mut shape = vec![t.rows()];
    shape.extend_from_slice(&graph.node_shapes[node]);
    t.reshape(&shape)
}

fn exact(graph: &SuperGraph, cache: &GraphCache, grads: &GraphGrads, kind: EnergyKind) -> Result<Vec<f64>> {
    let output = cache.output(graph);
    let batch = output.rows();
    let out_grad = &grads.nodes[graph.output];
    let in_edges = graph.in_edges();
    let seeds: Vec<Vec<f64>> = (0..batch).map(|s| loss_hessian_seed(kind, output.row(s))).collect();
    let mut result = vec![0.0; graph.edges.len()];
    for (id, edge) in graph.alive_edges() {
        let op_out = cache.op_outputs[id]
            .as_ref()
            .ok_or_else(|| Error::MissingCache(format!("edge {id} forward state")))?;
        let mut first: Vec<Option<Tensor>> = vec![None; graph.num_nodes];
        let mut second: Vec<Option<Tensor>> = vec![None; graph.num_nodes];
        first[edge.to] = Some(op_out.clone());
        second[edge.to] = Some(Tensor::zeros(op_out.shape()));
        for node in edge.to + 1..graph.num_nodes {
            let mut acc: Option<(Tensor, Tensor)> = None;
            for &e2 in &in_edges[node] {
                let other = &graph.edges[e2];
                let (Some(d1), Some(d2)) = (&first[other.from], &second[other.from]) else {
                    continue;
                };
                if !other.alive {
                    continue;
                }
                let (mut o1, mut o2) = match (&other.layer, &cache.layers[e2]) {
                    (None, _) => (d1.clone(), d2.clone()),
                    (Some(layer), Some(lc)) => {
                        let (o1, o2) = layer.jet(lc, d1, d2)?;
                        (node_shaped(o1, graph, node)?, node_shaped(o2, graph, node)?)
                    }
                    (Some(_), None) => return Err(Error::MissingCache(format!("edge {e2} layer state"))),
                };
                o1.scale(other.scale);
                o2.scale(other.scale);
                match &mut acc {
                    None => acc = Some((o1, o2)),
                    Some((a1, a2)) => {
                        a1.add_scaled(&o1, 1.0);
                        a2.add_scaled(&o2, 1.0);
                    }
                }
            }
            if let Some((a1, a2)) = acc {
                first[node] = Some(a1);
                second[node] = Some(a2);
            }
        }
        let (Some(d1), Some(d2)) = (&first[graph.output], &second[graph.output]) else {
            continue;
        };
        let n = d1.row_len();
        let mut quad = 0.0;
        for (s, seed) in seeds.iter().enumerate() {
            let t = d1.row(s);
            for i in 0..n {
                for j in 0..n {
                    quad += t[i] * seed[i * n + j] * t[j];
                }
            }
        }
        let lin: f64 = d2.data().iter().zip(out_grad.data()).map(|(a, b)| a * b).sum();
        result[id] = quad / batch as f64 + lin;
    }
    Ok(result)
}

fn approx(graph: &SuperGraph, cache: &GraphCache, kind: EnergyKind) -> Result<Vec<f64>> {
    let output = cache.output(graph);
    let batch = output.rows();
    let b = batch as f64;
    let in_edges = graph.in_edges();
    // Per-sample diagonal Hessian w.r.t. each node value, sample-major.
    let mut node_hess: Vec<Vec<f64>> = (0..graph.num_nodes)
        .map(|n| vec![0.0; batch * graph.node_shapes[n].iter().product::<usize>()])
        .collect();
    node_hess[graph.output] = (0..batch)
        .flat_map(|s| loss_hessian_seed_diag(kind, output.row(s)))
        .collect();
    let mut result = vec![0.0; graph.edges.len()];
    for node in (0..graph.num_nodes).rev() {
        let hj = std::mem::take(&mut node_hess[node]);
        let width = hj.len() / batch.max(1);
        let mean_h: Vec<f64> = (0..width)
            .map(|f| (0..batch).map(|s| hj[s * width + f]).sum::<f64>() / b)
            .collect();
        for &id in &in_edges[node] {
            let edge = &graph.edges[id];
            if !edge.alive {
                continue;
            }
            let op_out = cache.op_outputs[id]
                .as_ref()
                .ok_or_else(|| Error::MissingCache(format!("edge {id} forward state")))?;
            let mut h = 0.0;
            for (f, &mh) in mean_h.iter().enumerate() {
                let mean_abs = (0..batch).map(|s| op_out.data()[s * width + f].abs()).sum::<f64>() / b;
                h += mean_abs * mean_abs * mh;
            }
            result[id] = h;

            let w2 = edge.scale * edge.scale;
            let scaled: Vec<f64> = hj.iter().map(|&v| w2 * v).collect();
            let upstream = match (&edge.layer, &cache.layers[id]) {
                (None, _) => scaled,
                (Some(layer), Some(lc)) => {
                    let offset = lc
                        .offset
                        .as_ref()
                        .ok_or_else(|| Error::MissingCache(format!("edge {id}: backward pass not run")))?;
                    diag_step(layer, lc, offset, &scaled, true)?
                        .next
                        .expect("requested")
                }
                (Some(_), None) => return Err(Error::MissingCache(format!("edge {id} layer state"))),
            };
            for (acc, v) in node_hess[edge.from].iter_mut().zip(upstream) {
                *acc += v;
            }
        }
    }
    Ok(result)
}
