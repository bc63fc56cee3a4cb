//! Over-parameterized operation DAG: mixed node outputs, dependency-aware
//! variances, zero gates, entropy pruning and connectivity cleanup.

mod cells;
mod export;
mod gamma;
mod gates;
mod prune;

pub use cells::{stack_cells, validate_groups};
pub use export::{export_architecture, import_architecture, ArchEdge, ArchExport, SCHEMA_VERSION};
pub use gamma::{gamma_of_edge, harmonic, recompute_gammas, PRUNE_THRESHOLD};
pub use gates::insert_zero_gates;
pub use prune::{entropy_prune_mask, propagate_dependency_prune, prune_dead_ends, prune_step, PruneReport};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvGeometry, Layer, LayerCache, LayerGrad, PoolGeometry};
use crate::tensor::Tensor;

pub type NodeId = usize;
pub type EdgeId = usize;
pub type GroupId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Identity,
    FullyConnected,
    Conv3x3,
    Conv5x5,
    MaxPool,
    AvgPool,
    ZeroGateIdentity,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Identity => "identity",
            OpKind::FullyConnected => "fully_connected",
            OpKind::Conv3x3 => "conv3x3",
            OpKind::Conv5x5 => "conv5x5",
            OpKind::MaxPool => "max_pool",
            OpKind::AvgPool => "avg_pool",
            OpKind::ZeroGateIdentity => "zero_gate",
        }
    }

    /// Builds the layer realizing this op on nodes with the given per-sample shape.
    /// Identity-like ops carry no layer. Spatial ops preserve the node shape.
    pub fn build(self, node_shape: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Option<Layer>> {
        let spatial = |size: usize| -> Result<usize> {
            if node_shape.len() != 3 {
                return Err(Error::Graph(format!(
                    "{} needs C×H×W nodes, got {node_shape:?}",
                    self.name()
                )));
            }
            Ok(size)
        };
        Ok(match self {
            OpKind::Identity | OpKind::ZeroGateIdentity => None,
            OpKind::FullyConnected => {
                let d: usize = node_shape.iter().product();
                Some(Layer::fully_connected(d, d, activation, rng))
            }
            OpKind::Conv3x3 | OpKind::Conv5x5 => {
                let size = spatial(if self == OpKind::Conv3x3 { 3 } else { 5 })?;
                let c = node_shape[0];
                Some(Layer::conv2d(
                    ConvGeometry {
                        in_channels: c,
                        out_channels: c,
                        kernel: (size, size),
                        stride: 1,
                        padding: size / 2,
                    },
                    activation,
                    rng,
                ))
            }
            OpKind::MaxPool | OpKind::AvgPool => {
                spatial(3)?;
                let g = PoolGeometry {
                    size: 3,
                    stride: 1,
                    padding: 1,
                };
                Some(if self == OpKind::MaxPool {
                    Layer::max_pool(g)
                } else {
                    Layer::avg_pool(g)
                })
            }
        })
    }
}

/// One (node pair, operation) slot of the supergraph.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub op: OpKind,
    pub layer: Option<Layer>,
    /// Architecture scalar multiplying the op output.
    pub scale: f64,
    /// Switch variance.
    pub switch: f64,
    /// Dependency variance.
    pub gamma: f64,
    /// Reweighting coefficient of the ℓ1 penalty.
    pub omega: f64,
    /// Posterior variance.
    pub posterior: f64,
    /// Curvature of the energy w.r.t. `w`.
    pub hess: f64,
    pub group: Option<GroupId>,
    pub alive: bool,
}

impl Edge {
    pub fn new(from: NodeId, to: NodeId, op: OpKind, layer: Option<Layer>) -> Edge {
        Edge {
            from,
            to,
            op,
            layer,
            scale: 1.0,
            switch: 1.0,
            gamma: 1.0,
            omega: 0.0,
            posterior: 1.0,
            hess: 0.0,
            group: None,
            alive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperGraph {
    pub num_nodes: usize,
    /// Per-sample feature shape of every node.
    pub node_shapes: Vec<Vec<usize>>,
    pub edges: Vec<Edge>,
    /// Original node → its gate edge.
    pub gates: BTreeMap<NodeId, EdgeId>,
    pub input: NodeId,
    pub output: NodeId,
    /// Interior cell boundaries treated as sources when computing variances.
    pub cell_inputs: Vec<NodeId>,
}

impl SuperGraph {
    pub fn new(node_shapes: Vec<Vec<usize>>, input: NodeId, output: NodeId) -> SuperGraph {
        SuperGraph {
            num_nodes: node_shapes.len(),
            node_shapes,
            edges: Vec::new(),
            gates: BTreeMap::new(),
            input,
            output,
            cell_inputs: Vec::new(),
        }
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<EdgeId> {
        if edge.from >= edge.to || edge.to >= self.num_nodes {
            return Err(Error::Graph(format!(
                "edge {}→{} violates topological order over {} nodes",
                edge.from, edge.to, self.num_nodes
            )));
        }
        self.edges.push(edge);
        Ok(self.edges.len() - 1)
    }

    pub fn alive_edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.alive)
    }

    pub fn alive_count(&self) -> usize {
        self.edges.iter().filter(|e| e.alive).count()
    }

    pub fn alive_mask(&self) -> Vec<bool> {
        self.edges.iter().map(|e| e.alive).collect()
    }

    /// Gate node → the node whose fan-out it guards.
    pub fn gate_sources(&self) -> BTreeMap<NodeId, NodeId> {
        self.gates
            .iter()
            .map(|(&node, &edge)| (self.edges[edge].to, node))
            .collect()
    }

    pub fn is_gate_node(&self, node: NodeId) -> bool {
        self.gates.values().any(|&e| self.edges[e].to == node)
    }

    pub fn is_source(&self, node: NodeId) -> bool {
        node == self.input || self.cell_inputs.contains(&node)
    }

    /// Edge ids entering each node, in edge order.
    pub fn in_edges(&self) -> Vec<Vec<EdgeId>> {
        let mut lists = vec![Vec::new(); self.num_nodes];
        for (i, e) in self.edges.iter().enumerate() {
            lists[e.to].push(i);
        }
        lists
    }

    fn zeros_at(&self, node: NodeId, batch: usize) -> Tensor {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.node_shapes[node]);
        Tensor::zeros(&shape)
    }
}

/// Forward state of every node and alive edge.
#[derive(Debug, Clone)]
pub struct GraphCache {
    pub nodes: Vec<Tensor>,
    /// Op output (before multiplying by `w`), shaped like the target node.
    pub op_outputs: Vec<Option<Tensor>>,
    pub layers: Vec<Option<LayerCache>>,
}

impl GraphCache {
    pub fn output(&self, graph: &SuperGraph) -> &Tensor {
        &self.nodes[graph.output]
    }
}

fn node_shaped(t: Tensor, graph: &SuperGraph, node: NodeId) -> Result<Tensor> {
    let mut shape = vec![t.rows()];
    shape.extend_from_slice(&graph.node_shapes[node]);
    t.reshape(&shape)
}

fn apply_op(graph: &SuperGraph, id: EdgeId, z: &Tensor) -> Result<(Tensor, Option<LayerCache>)> {
    let edge = &graph.edges[id];
    match &edge.layer {
        None => Ok((z.clone(), None)),
        Some(layer) => {
            let cache = layer.forward(id, z)?;
            let out = node_shaped(cache.output.clone(), graph, edge.to)?;
            Ok((out, Some(cache)))
        }
    }
}

/// `z_j = Σ w · op(z_i)` over the alive edges entering `node`.
pub fn mix_output(graph: &SuperGraph, node: NodeId, upstream: &[Option<Tensor>]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (id, edge) in graph.alive_edges().filter(|(_, e)| e.to == node) {
        let z = upstream
            .get(edge.from)
            .and_then(|z| z.as_ref())
            .ok_or_else(|| Error::Graph(format!("node {} output missing for edge {id}", edge.from)))?;
        let (out, _) = apply_op(graph, id, z)?;
        match &mut total {
            None => {
                let mut t = out;
                t.scale(edge.scale);
                total = Some(t);
            }
            Some(t) => t.add_scaled(&out, edge.scale),
        }
    }
    let batch = upstream.iter().flatten().next().map_or(1, |t| t.rows());
    Ok(total.unwrap_or_else(|| graph.zeros_at(node, batch)))
}

/// Evaluates every node for the input batch `x`.
pub fn graph_forward(graph: &SuperGraph, x: &Tensor) -> Result<GraphCache> {
    let batch = x.rows();
    let expected: usize = graph.node_shapes[graph.input].iter().product();
    if x.row_len() != expected {
        return Err(Error::Shape(format!(
            "graph input expects {expected} features per sample, got {}",
            x.row_len()
        )));
    }
    let in_edges = graph.in_edges();
    let mut nodes: Vec<Tensor> = Vec::with_capacity(graph.num_nodes);
    let mut op_outputs = vec![None; graph.edges.len()];
    let mut layers = vec![None; graph.edges.len()];
    for node in 0..graph.num_nodes {
        if node == graph.input {
            nodes.push(node_shaped(x.clone(), graph, node)?);
            continue;
        }
        let mut z = graph.zeros_at(node, batch);
        for &id in &in_edges[node] {
            let edge = &graph.edges[id];
            if !edge.alive {
                continue;
            }
            let (out, cache) = apply_op(graph, id, &nodes[edge.from])?;
            z.add_scaled(&out, edge.scale);
            op_outputs[id] = Some(out);
            layers[id] = cache;
        }
        nodes.push(z);
    }
    Ok(GraphCache {
        nodes,
        op_outputs,
        layers,
    })
}

#[derive(Debug, Clone)]
pub struct GraphGrads {
    /// ∂E/∂w per edge (zero for dead edges).
    pub scale: Vec<f64>,
    pub layers: Vec<Option<LayerGrad>>,
    /// ∂E/∂z per node.
    pub nodes: Vec<Tensor>,
}

/// Reverse pass from ∂E/∂z_output; fills layer gradient state in `cache`.
pub fn graph_backward(graph: &SuperGraph, cache: &mut GraphCache, out_grad: &Tensor) -> Result<GraphGrads> {
    let batch = out_grad.rows();
    let in_edges = graph.in_edges();
    let mut gz: Vec<Tensor> = (0..graph.num_nodes).map(|n| graph.zeros_at(n, batch)).collect();
    gz[graph.output] = node_shaped(out_grad.clone(), graph, graph.output)?;
    let mut gw = vec![0.0; graph.edges.len()];
    let mut glayers = vec![None; graph.edges.len()];
    for node in (0..graph.num_nodes).rev() {
        for &id in in_edges[node].iter().rev() {
            let edge = &graph.edges[id];
            if !edge.alive {
                continue;
            }
            let op_out = cache.op_outputs[id]
                .as_ref()
                .ok_or_else(|| Error::MissingCache(format!("edge {id} forward state")))?;
            gw[id] = op_out.data().iter().zip(gz[node].data()).map(|(a, b)| a * b).sum();
            let mut g_op = gz[node].clone();
            g_op.scale(edge.scale);
            let dx = match (&edge.layer, cache.layers[id].as_mut()) {
                (None, _) => g_op,
                (Some(layer), Some(lc)) => {
                    let g = g_op.reshape(lc.output.shape())?;
                    let (lg, dx) = layer.backward(id, lc, &g)?;
                    glayers[id] = Some(lg);
                    dx
                }
                (Some(_), None) => return Err(Error::MissingCache(format!("edge {id} layer state"))),
            };
            let dx = node_shaped(dx, graph, edge.from)?;
            gz[edge.from].add_scaled(&dx, 1.0);
        }
    }
    Ok(GraphGrads {
        scale: gw,
        layers: glayers,
        nodes: gz,
    })
}
