//! Planted-subgraph regression tasks with known ground-truth support.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{Dataset, Split};
use crate::bayes::TaskConfig;
use crate::error::{Error, Result};
use crate::graph::{graph_forward, insert_zero_gates, stack_cells, Edge, OpKind, SuperGraph};
use crate::nn::{Activation, Targets};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    /// Gated supergraph to search, every edge alive with `w = 1`.
    pub graph: SuperGraph,
    /// Generating network: planted edges alive with their true `w`.
    pub teacher: SuperGraph,
    pub train: Dataset,
    pub test: Dataset,
    /// Ground truth over the searchable (non-gate) edges, in edge order.
    pub planted: Vec<bool>,
}

impl SyntheticTask {
    /// Alive flags of the searchable edges of `graph`.
    pub fn recovered(graph: &SuperGraph) -> Vec<bool> {
        graph
            .edges
            .iter()
            .filter(|e| e.op != OpKind::ZeroGateIdentity)
            .map(|e| e.alive)
            .collect()
    }

    pub fn exact_recovery(&self, graph: &SuperGraph) -> bool {
        Self::recovered(graph) == self.planted
    }
}

/// Every selected edge must lie on an input→output path of selected edges.
pub fn check_planted(graph: &SuperGraph, mask: &[bool]) -> Result<()> {
    if mask.len() != graph.edges.len() {
        return Err(Error::Graph(format!("mask of {} for {} edges", mask.len(), graph.edges.len())));
    }
    let mut fwd = vec![false; graph.num_nodes];
    fwd[graph.input] = true;
    let mut bwd = vec![false; graph.num_nodes];
    bwd[graph.output] = true;
    let mut order: Vec<usize> = (0..graph.edges.len()).filter(|&i| mask[i]).collect();
    order.sort_by_key(|&i| graph.edges[i].from);
    for &i in &order {
        if fwd[graph.edges[i].from] {
            fwd[graph.edges[i].to] = true;
        }
    }
    order.sort_by_key(|&i| std::cmp::Reverse(graph.edges[i].to));
    for &i in &order {
        if bwd[graph.edges[i].to] {
            bwd[graph.edges[i].from] = true;
        }
    }
    for &i in &order {
        let e = &graph.edges[i];
        if !fwd[e.from] || !bwd[e.to] {
            return Err(Error::Graph(format!(
                "planted edge {i} ({}→{}) is not on an input→output path",
                e.from, e.to
            )));
        }
    }
    if order.is_empty() {
        return Err(Error::Graph("planted subgraph is empty".into()));
    }
    Ok(())
}

/// Ungated template: `ops_per_pair` dense ops on every ordered node pair.
fn template(cfg: &TaskConfig, activation: Activation, rng: &mut ChaCha8Rng) -> Result<SuperGraph> {
    let mut g = SuperGraph::new(vec![vec![cfg.features]; cfg.nodes], 0, cfg.nodes - 1);
    for to in 1..cfg.nodes {
        for from in 0..to {
            for _ in 0..cfg.ops_per_pair {
                let layer = OpKind::FullyConnected.build(&[cfg.features], activation, rng)?;
                g.add_edge(Edge::new(from, to, OpKind::FullyConnected, layer))?;
            }
        }
    }
    Ok(g)
}

/// One random input→output path: random intermediate stops in topological
/// order and a random op on every hop.
fn random_path(graph: &SuperGraph, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let last = graph.num_nodes - 1;
    let mut stops: Vec<usize> = (1..last).filter(|_| rng.random_bool(0.5)).collect();
    stops.insert(0, 0);
    stops.push(last);
    stops
        .windows(2)
        .map(|pair| {
            let options: Vec<usize> = (0..graph.edges.len())
                .filter(|&i| graph.edges[i].from == pair[0] && graph.edges[i].to == pair[1])
                .collect();
            options[rng.random_range(0..options.len())]
        })
        .collect()
}

/// Random planted mask: a union of random input→output paths with exactly
/// `count` edges, so every planted edge lies on such a path.
fn plant(graph: &SuperGraph, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    const ATTEMPTS: usize = 1_000;
    let total = graph.edges.len();
    if count == 0 || count > total {
        return Err(Error::Config {
            field: "task.planted".into(),
            reason: format!("must lie in 1..={total}, got {count}"),
        });
    }
    for _ in 0..ATTEMPTS {
        let mut mask = vec![false; total];
        let mut chosen = 0;
        for _ in 0..ATTEMPTS {
            let path = random_path(graph, rng);
            let fresh = path.iter().filter(|&&i| !mask[i]).count();
            if chosen + fresh > count {
                continue;
            }
            for i in path {
                mask[i] = true;
            }
            chosen += fresh;
            if chosen == count {
                check_planted(graph, &mask)?;
                return Ok(mask);
            }
        }
    }
    Err(Error::Graph(format!("cannot build a planted subgraph of {count} connected edges")))
}

fn sample_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Result<Tensor> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::from_vec(&[n, d], (0..n * d).map(|_| normal.sample(rng)).collect())
}

fn regression_split(
    teacher: &SuperGraph,
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    noise_var: f64,
    split: Split,
) -> Result<Dataset> {
    let x = sample_inputs(rng, n, d)?;
    let mut y = graph_forward(teacher, &x)?.output(teacher).clone();
    let y_rows = y.rows();
    let y_width = y.row_len();
    if noise_var > 0.0 {
        let noise = Normal::new(0.0, noise_var.sqrt()).map_err(|e| Error::Hyper(e.to_string()))?;
        for v in y.data_mut() {
            *v += noise.sample(rng);
        }
    }
    let y = y.reshape(&[y_rows, y_width])?;
    Dataset::new(x, Targets::Values(y), split)
}

fn planted_weight(rng: &mut ChaCha8Rng) -> f64 {
    let magnitude = rng.random_range(0.7..1.3);
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Builds a search graph over `cfg.nodes` nodes with `cfg.ops_per_pair` dense
/// ops per node pair, plants `cfg.planted` of them, and samples regression
/// data from the planted network with Gaussian noise of variance `noise_var`.
pub fn gen_synthetic_dag_task(seed: u64, cfg: &TaskConfig, activation: Activation, noise_var: f64) -> Result<SyntheticTask> {
    if cfg.nodes < 2 || cfg.features == 0 || cfg.ops_per_pair == 0 {
        return Err(Error::Config {
            field: "task".into(),
            reason: "need at least two nodes, one feature and one op per pair".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = template(cfg, activation, &mut rng)?;
    let planted = plant(&base, cfg.planted, &mut rng)?;
    let mut teacher = base.clone();
    for (e, &keep) in teacher.edges.iter_mut().zip(&planted) {
        e.alive = keep;
        e.scale = if keep { planted_weight(&mut rng) } else { 0.0 };
    }
    let train = regression_split(&teacher, &mut rng, cfg.train_samples, cfg.features, noise_var, Split::Train)?;
    let test = regression_split(&teacher, &mut rng, cfg.test_samples, cfg.features, noise_var, Split::Test)?;
    Ok(SyntheticTask {
        graph: insert_zero_gates(&base)?,
        teacher,
        train,
        test,
        planted,
    })
}

/// Cell variant: the planted template is repeated `cfg.cells` times, so the
/// ground truth is one per-cell support shared by every cell (and `planted`
/// lists it once per cell).
pub fn gen_synthetic_cell_task(seed: u64, cfg: &TaskConfig, activation: Activation, noise_var: f64) -> Result<SyntheticTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = template(cfg, activation, &mut rng)?;
    let planted = plant(&base, cfg.planted, &mut rng)?;
    let mut teacher_cell = base.clone();
    for (e, &keep) in teacher_cell.edges.iter_mut().zip(&planted) {
        e.alive = keep;
        e.scale = if keep { planted_weight(&mut rng) } else { 0.0 };
    }
    let teacher = stack_cells(&teacher_cell, cfg.cells)?;
    let train = regression_split(&teacher, &mut rng, cfg.train_samples, cfg.features, noise_var, Split::Train)?;
    let test = regression_split(&teacher, &mut rng, cfg.test_samples, cfg.features, noise_var, Split::Test)?;
    let graph = stack_cells(&insert_zero_gates(&base)?, cfg.cells)?;
    Ok(SyntheticTask {
        graph,
        teacher,
        train,
        test,
        planted: planted.repeat(cfg.cells),
    })
}
