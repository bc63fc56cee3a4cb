//! Momentum SGD on the data energy plus the sparsity penalties.

use serde::{Deserialize, Serialize};

use super::update::{group_l2_penalty, reweighted_l1_penalty};
use crate::error::{Error, Result};
use crate::graph::{graph_backward, graph_forward, EdgeId, SuperGraph};
use crate::nn::{self, energy, EnergyKind, Layer, Targets};
use crate::tensor::Tensor;

/// How the ℓ1 term on architecture scalars enters the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    /// Subgradient `λ_w ω sign(w)` added to the gradient (sign(0) = 0).
    #[default]
    Subgradient,
    /// Plain step on the energy followed by soft-thresholding.
    Proximal,
}

/// Penalty on the architecture scalars of a graph.
#[derive(Debug, Clone, Copy)]
pub enum ArchPenalty<'a> {
    None,
    L1,
    /// Group ℓ2 over tied edges; every edge must belong to exactly one list.
    GroupL2(&'a [Vec<EdgeId>]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Sparsity intensity on `w`.
    pub lambda_w: f64,
    /// ℓ2 decay on op/layer weights (not biases, not `w`).
    pub weight_decay: f64,
    pub l1_mode: L1Mode,
    /// Keep `w` fixed (retraining).
    pub freeze_w: bool,
    /// Leave op layers untouched.
    pub freeze_ops: bool,
}

/// Velocity buffers, keyed by parameter slot.
#[derive(Debug, Clone, Default)]
pub struct Momentum {
    slots: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new() -> Self {
        Momentum::default()
    }

    /// `v ← μv + g`, `p ← p − lr·v`.
    pub fn step(&mut self, slot: usize, params: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
        if self.slots.len() <= slot {
            self.slots.resize(slot + 1, Vec::new());
        }
        let v = &mut self.slots[slot];
        if v.len() != params.len() {
            *v = vec![0.0; params.len()];
        }
        for ((p, vi), &g) in params.iter_mut().zip(v.iter_mut()).zip(grad) {
            *vi = mu * *vi + g;
            *p -= lr * *vi;
        }
    }
}

/// Result of one penalized step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub energy: f64,
    pub penalty: f64,
}

impl StepStats {
    pub fn objective(&self) -> f64 {
        self.energy + self.penalty
    }
}

fn check_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} became {value}")))
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

// Slot layout: 0 holds `w`; edge e uses 1 + 2e (weights) and 2 + 2e (bias).
fn weight_slot(edge: usize) -> usize {
    1 + 2 * edge
}

/// One minibatch step on `E + λ_w Σ ω|w|` (or the tied group penalty) plus
/// `λ Σ‖W‖²` over op layers. Hyper variables are read from the edges and
/// never changed here.
pub fn penalized_sgd_step(
    graph: &mut SuperGraph,
    optimizer: &mut Momentum,
    x: &Tensor,
    targets: &Targets,
    kind: EnergyKind,
    penalty: ArchPenalty<'_>,
    cfg: &StepConfig,
) -> Result<StepStats> {
    let mut cache = graph_forward(graph, x)?;
    let (loss, grad_out) = energy(cache.output(graph), targets, kind)?;
    check_finite(loss, "energy")?;
    let grads = graph_backward(graph, &mut cache, &grad_out)?;

    let alive: Vec<bool> = graph.alive_mask();
    let scales: Vec<f64> = graph.edges.iter().map(|edge| edge.scale).collect();
    let omega: Vec<f64> = graph.edges.iter().map(|edge| edge.omega).collect();
    let (arch_penalty, arch_grad) = match penalty {
        ArchPenalty::None => (0.0, vec![0.0; scales.len()]),
        ArchPenalty::L1 => reweighted_l1_penalty(&scales, &omega, cfg.lambda_w),
        ArchPenalty::GroupL2(groups) => {
            let group_omega: Vec<f64> = groups
                .iter()
                .map(|members| members.first().map_or(0.0, |&i| omega[i]))
                .collect();
            group_l2_penalty(groups, &scales, &group_omega, cfg.lambda_w)
        }
    };
    let mut decay = 0.0;
    for (edge, &a) in graph.edges.iter().zip(&alive) {
        if let (true, Some(layer)) = (a, &edge.layer) {
            decay += cfg.weight_decay * layer.weights.norm_sq();
        }
    }
    let stats = StepStats {
        energy: loss,
        penalty: arch_penalty + decay,
    };
    check_finite(stats.objective(), "penalized objective")?;

    if !cfg.freeze_w {
        let proximal = cfg.l1_mode == L1Mode::Proximal && matches!(penalty, ArchPenalty::L1);
        let scale_grad: Vec<f64> = (0..scales.len())
            .map(|i| match (alive[i], proximal) {
                (false, _) => 0.0,
                (true, true) => grads.scale[i],
                (true, false) => grads.scale[i] + arch_grad[i],
            })
            .collect();
        let mut new_scales = scales.clone();
        optimizer.step(0, &mut new_scales, &scale_grad, cfg.learning_rate, cfg.momentum);
        for (i, edge) in graph.edges.iter_mut().enumerate() {
            if !alive[i] {
                continue;
            }
            edge.scale = if proximal {
                soft_threshold(new_scales[i], cfg.learning_rate * cfg.lambda_w * edge.omega)
            } else {
                new_scales[i]
            };
        }
    }

    if !cfg.freeze_ops {
        for (id, edge) in graph.edges.iter_mut().enumerate() {
            let (Some(layer), Some(lg)) = (edge.layer.as_mut(), grads.layers[id].as_ref()) else {
                continue;
            };
            if !alive[id] || !layer.has_weights() {
                continue;
            }
            let g: Vec<f64> = lg
                .weights
                .data()
                .iter()
                .zip(layer.weights.data())
                .map(|(&g, &p)| g + 2.0 * cfg.weight_decay * p)
                .collect();
            optimizer.step(weight_slot(id), layer.weights.data_mut(), &g, cfg.learning_rate, cfg.momentum);
            if let (Some(b), Some(gb)) = (layer.bias.as_mut(), lg.bias.as_ref()) {
                optimizer.step(weight_slot(id) + 1, b.data_mut(), gb.data(), cfg.learning_rate, cfg.momentum);
            }
        }
    }
    Ok(stats)
}

/// Group-ℓ2 penalty on one layer's weights: `λ Σ_g ω_g ‖W_g‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPenalty {
    pub layer: usize,
    pub groups: Vec<Vec<usize>>,
    pub omega: Vec<f64>,
    pub lambda: f64,
}

/// Zero-mask over a layer's weights; masked rows of a dense layer also zero the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMask {
    pub weights: Vec<bool>,
}

/// One masked minibatch step on a plain layer stack. Uses the rate, momentum
/// and decay of `cfg`; the architecture fields are ignored.
pub fn net_sgd_step(
    layers: &mut [Layer],
    masks: &[Option<LayerMask>],
    optimizer: &mut Momentum,
    x: &Tensor,
    targets: &Targets,
    kind: EnergyKind,
    penalties: &[LayerPenalty],
    cfg: &StepConfig,
) -> Result<StepStats> {
    let StepConfig {
        learning_rate,
        momentum,
        weight_decay,
        ..
    } = *cfg;
    let (loss, grads, _, _) = nn::energy_and_grads(layers, x, targets, kind)?;
    check_finite(loss, "energy")?;
    let mut penalty = 0.0;
    let mut extra: Vec<Option<Vec<f64>>> = vec![None; layers.len()];
    for p in penalties {
        let layer = layers
            .get(p.layer)
            .ok_or_else(|| Error::Group(format!("penalty names missing layer {}", p.layer)))?;
        let (value, grad) = group_l2_penalty(&p.groups, layer.weights.data(), &p.omega, p.lambda);
        penalty += value;
        match &mut extra[p.layer] {
            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
            slot => *slot = Some(grad),
        }
    }
    for layer in layers.iter() {
        penalty += weight_decay * layer.weights.norm_sq();
    }
    check_finite(loss + penalty, "penalized objective")?;

    for (i, (layer, lg)) in layers.iter_mut().zip(&grads).enumerate() {
        if !layer.has_weights() {
            continue;
        }
        let mask = masks.get(i).and_then(|m| m.as_ref());
        let mut g: Vec<f64> = lg
            .weights
            .data()
            .iter()
            .zip(layer.weights.data())
            .map(|(&g, &p)| g + 2.0 * weight_decay * p)
            .collect();
        if let Some(acc) = &extra[i] {
            g.iter_mut().zip(acc).for_each(|(a, b)| *a += b);
        }
        optimizer.step(2 * i, layer.weights.data_mut(), &g, learning_rate, momentum);
        if let (Some(b), Some(gb)) = (layer.bias.as_mut(), lg.bias.as_ref()) {
            optimizer.step(2 * i + 1, b.data_mut(), gb.data(), learning_rate, momentum);
        }
        if let Some(m) = mask {
            apply_mask(layer, m)?;
        }
    }
    Ok(StepStats { energy: loss, penalty })
}

/// Zeroes masked weights and, for dense layers, the bias of fully masked rows.
pub fn apply_mask(layer: &mut Layer, mask: &LayerMask) -> Result<()> {
    if mask.weights.len() != layer.weights.len() {
        return Err(Error::Shape(format!(
            "mask of {} entries for {} weights",
            mask.weights.len(),
            layer.weights.len()
        )));
    }
    for (p, &keep) in layer.weights.data_mut().iter_mut().zip(&mask.weights) {
        if !keep {
            *p = 0.0;
        }
    }
    let rows = layer.weights.shape()[0];
    let per_row = layer.weights.len() / rows.max(1);
    if let Some(b) = layer.bias.as_mut() {
        for (r, bias) in b.data_mut().iter_mut().enumerate() {
            if mask.weights[r * per_row..(r + 1) * per_row].iter().all(|&k| !k) {
                *bias = 0.0;
            }
        }
    }
    Ok(())
}
