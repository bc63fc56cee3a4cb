//! End-to-end search, compression and retraining loops.

mod compress;
mod graph;
mod presets;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use compress::{retrain_net, run_compression, CompressionOutcome, CompressionPlan, LayerGroups};
pub use graph::{retrain_graph, run_proxy_cells, run_proxyless, GraphOutcome, HyperSnapshot};
pub use presets::{build_network, default_plans, param_counts, surviving_widths};

use crate::graph::PruneReport;
use crate::io::{Dataset, MetricsRow};
use crate::nn::{EnergyKind, Targets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Proxyless,
    ProxyCell,
    Compress,
}

/// Trace of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub mode: SearchMode,
    pub seed: u64,
    /// One row per recorded epoch.
    pub rows: Vec<MetricsRow>,
    /// One entry per completed iteration.
    pub prune_events: Vec<PruneReport>,
    pub iterations_run: usize,
    pub early_stopped: bool,
    /// Some iteration had to keep a path alive to avoid severing the output.
    pub degenerate: bool,
}

impl SearchReport {
    fn new(mode: SearchMode, seed: u64) -> Self {
        SearchReport {
            mode,
            seed,
            rows: Vec::new(),
            prune_events: Vec::new(),
            iterations_run: 0,
            early_stopped: false,
            degenerate: false,
        }
    }
}

/// Before/after test metric of a retraining run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub epochs: usize,
    pub before: f64,
    pub after: f64,
    pub final_loss: f64,
}

const EVAL_CHUNK: usize = 500;

pub(crate) fn energy_kind(targets: &Targets) -> EnergyKind {
    match targets {
        Targets::Values(_) => EnergyKind::Mse,
        Targets::Labels(_) => EnergyKind::SoftmaxCrossEntropy,
    }
}

/// Shuffled minibatch index lists covering `data` once.
pub(crate) fn epoch_batches(len: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Distinct random indices drawn for one curvature evaluation, in ascending order.
pub(crate) fn curvature_indices(len: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, len, count.min(len)).into_vec();
    idx.sort_unstable();
    idx
}

/// `(min, median)` of a list; NaN for an empty list.
pub(crate) fn min_median(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    let median = if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
    (v[0], median)
}

/// Test metric of a graph: classification error for labels, mean energy for values.
pub fn graph_metric(graph: &crate::graph::SuperGraph, data: &Dataset) -> crate::Result<f64> {
    evaluate(data, EVAL_CHUNK, |x| Ok(crate::graph::graph_forward(graph, x)?.output(graph).clone()))
}

/// Test metric of a layer stack, as for [`graph_metric`].
pub fn net_metric(layers: &[crate::nn::Layer], data: &Dataset) -> crate::Result<f64> {
    evaluate(data, EVAL_CHUNK, |x| Ok(crate::nn::forward(layers, x)?.0))
}

/// Evaluates `predict` over `data` in chunks; returns the classification error
/// for labels and the mean energy for values.
pub(crate) fn evaluate(
    data: &Dataset,
    chunk: usize,
    mut predict: impl FnMut(&crate::tensor::Tensor) -> crate::Result<crate::tensor::Tensor>,
) -> crate::Result<f64> {
    let kind = energy_kind(&data.targets);
    let mut total = 0.0;
    let n = data.len();
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let (x, t) = data.batch(&idx);
        let out = predict(&x)?;
        let part = match (&t, kind) {
            (Targets::Labels(l), _) => crate::nn::classification_error(&out, l),
            _ => crate::nn::energy(&out, &t, kind)?.0,
        };
        total += part * idx.len() as f64;
    }
    Ok(total / n.max(1) as f64)
}
