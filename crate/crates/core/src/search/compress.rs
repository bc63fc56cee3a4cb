//! Structured compression of a plain layer stack with group variances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{curvature_indices, energy_kind, epoch_batches, min_median, net_metric, RetrainReport, SearchMode, SearchReport};
use crate::bayes::{
    apply_mask, net_sgd_step, structural_update, weight_groups, GroupPattern, GroupSpec, GroupState, LayerMask,
    LayerPenalty, Momentum, SearchConfig, StepConfig,
};
use crate::curvature::layer_hessians;
use crate::error::{Error, Result};
use crate::graph::PruneReport;
use crate::io::{Dataset, MetricsRow};
use crate::nn::{self, Layer};

/// Group patterns of one weighted layer, each with its penalty strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub layer: usize,
    pub patterns: Vec<GroupPattern>,
    /// One strength per entry of `patterns`.
    pub lambdas: Vec<f64>,
}

/// One pattern's groups over one layer, with their running variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGroups {
    pub layer: usize,
    pub pattern: GroupPattern,
    pub lambda: f64,
    pub groups: Vec<GroupSpec>,
    pub states: Vec<GroupState>,
}

impl LayerGroups {
    fn alive_gammas(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().filter(|s| !s.pruned).map(|s| s.gamma)
    }
}

#[derive(Debug, Clone)]
pub struct CompressionOutcome {
    pub layers: Vec<Layer>,
    /// One entry per layer; `None` for layers without weights.
    pub masks: Vec<Option<LayerMask>>,
    pub groups: Vec<LayerGroups>,
    /// Prune events list flat indices into the concatenated groups of `groups`.
    pub report: SearchReport,
}

fn net_step_config(config: &SearchConfig) -> StepConfig {
    StepConfig {
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        lambda_w: 0.0,
        weight_decay: config.compress.weight_decay,
        l1_mode: config.l1_mode,
        freeze_w: true,
        freeze_ops: false,
    }
}

fn full_masks(layers: &[Layer]) -> Vec<Option<LayerMask>> {
    layers
        .iter()
        .map(|l| {
            l.has_weights().then(|| LayerMask {
                weights: vec![true; l.weights.len()],
            })
        })
        .collect()
}

fn check_masks(layers: &[Layer], masks: &[Option<LayerMask>]) -> Result<()> {
    if masks.len() != layers.len() {
        return Err(Error::Shape(format!("{} masks for {} layers", masks.len(), layers.len())));
    }
    for (i, (layer, mask)) in layers.iter().zip(masks).enumerate() {
        match mask {
            Some(m) if m.weights.len() != layer.weights.len() => {
                return Err(Error::Shape(format!(
                    "layer {i}: mask of {} entries for {} weights",
                    m.weights.len(),
                    layer.weights.len()
                )))
            }
            Some(m) if !m.weights.iter().any(|&k| k) => {
                return Err(Error::Severed(format!("every weight of layer {i} is masked")));
            }
            _ => {}
        }
    }
    Ok(())
}

fn net_epoch(
    layers: &mut [Layer],
    masks: &[Option<LayerMask>],
    optimizer: &mut Momentum,
    train: &Dataset,
    penalties: &[LayerPenalty],
    step: &StepConfig,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let kind = energy_kind(&train.targets);
    let mut total = 0.0;
    for idx in epoch_batches(train.len(), batch_size, rng) {
        let (x, t) = train.batch(&idx);
        let stats = net_sgd_step(layers, masks, optimizer, &x, &t, kind, penalties, step)?;
        total += stats.objective() * idx.len() as f64;
    }
    Ok(total / train.len().max(1) as f64)
}

fn build_groups(layers: &[Layer], plans: &[CompressionPlan]) -> Result<Vec<LayerGroups>> {
    let mut out = Vec::new();
    for plan in plans {
        let layer = layers
            .get(plan.layer)
            .filter(|l| l.has_weights())
            .ok_or_else(|| Error::Group(format!("plan names layer {} which has no weights", plan.layer)))?;
        if plan.lambdas.len() != plan.patterns.len() {
            return Err(Error::Group(format!(
                "layer {}: {} strengths for {} patterns",
                plan.layer,
                plan.lambdas.len(),
                plan.patterns.len()
            )));
        }
        for (&pattern, &lambda) in plan.patterns.iter().zip(&plan.lambdas) {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::Config {
                    field: "compress.layer_lambdas".into(),
                    reason: format!("layer {}: {lambda} is not a non-negative number", plan.layer),
                });
            }
            let groups = weight_groups(pattern, layer.weights.shape())?;
            out.push(LayerGroups {
                layer: plan.layer,
                pattern,
                lambda,
                states: vec![GroupState::default(); groups.len()],
                groups,
            });
        }
    }
    Ok(out)
}

fn penalties(groups: &[LayerGroups]) -> Vec<LayerPenalty> {
    groups
        .iter()
        .filter(|g| g.lambda > 0.0)
        .map(|g| {
            let live: Vec<usize> = (0..g.groups.len()).filter(|&i| !g.states[i].pruned).collect();
            LayerPenalty {
                layer: g.layer,
                groups: live.iter().map(|&i| g.groups[i].members.clone()).collect(),
                omega: live.iter().map(|&i| g.states[i].omega).collect(),
                lambda: g.lambda,
            }
        })
        .collect()
}

/// Masks every group at or below the threshold, then spreads unit deaths
/// between layers. A group whose weights all ended up masked without its own
/// variance crossing the threshold is retired as a cascade prune.
fn prune_groups(
    layers: &[Layer],
    groups: &mut [LayerGroups],
    masks: &mut [Option<LayerMask>],
    threshold: f64,
) -> PruneReport {
    let mut report = PruneReport::default();
    let mut flat = 0;
    let mut entropy_hits = Vec::new();
    for (gi, lg) in groups.iter().enumerate() {
        for (k, state) in lg.states.iter().enumerate() {
            if !state.pruned && state.gamma <= threshold {
                entropy_hits.push((gi, k, flat + k));
            }
        }
        flat += lg.groups.len();
    }
    for &(gi, k, id) in &entropy_hits {
        let lg = &mut groups[gi];
        lg.states[k].pruned = true;
        let mask = masks[lg.layer].as_mut().expect("weighted layer has a mask");
        for &m in &lg.groups[k].members {
            mask.weights[m] = false;
        }
        report.entropy.push(id);
    }
    propagate_unit_masks(layers, masks);
    let mut flat = 0;
    for lg in groups.iter_mut() {
        let mask = masks[lg.layer].as_ref().expect("weighted layer has a mask");
        for (k, (spec, state)) in lg.groups.iter().zip(lg.states.iter_mut()).enumerate() {
            if !state.pruned && spec.members.iter().all(|&m| !mask.weights[m]) {
                state.pruned = true;
                report.cascade.push(flat + k);
            }
        }
        flat += lg.groups.len();
    }
    report
}

/// Consecutive weighted layers share units: output unit `u` of one feeds
/// input slots `u·fan..(u+1)·fan` of the next (`fan > 1` after flattening a
/// feature map). A unit whose incoming weights are all masked emits
/// `act(0) = 0`, so its outgoing weights die too; a unit whose outgoing
/// weights are all masked is unused, so its incoming weights die too.
/// Repeats until nothing changes.
fn propagate_unit_masks(layers: &[Layer], masks: &mut [Option<LayerMask>]) {
    let weighted: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].has_weights()).collect();
    loop {
        let mut changed = false;
        for pair in weighted.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (Some(mut ma), Some(mut mb)) = (masks[a].take(), masks[b].take()) else {
                continue;
            };
            let units = layers[a].weights.shape()[0];
            let per_row = layers[a].weights.len() / units.max(1);
            let shape_b = layers[b].weights.shape();
            let (rows_b, inputs_b) = (shape_b[0], shape_b[1]);
            let inner_b: usize = shape_b[2..].iter().product();
            let silent = layers[a].activation.apply(0.0) == 0.0;
            if units > 0 && inputs_b % units == 0 {
                let fan = inputs_b / units;
                let outgoing = |u: usize| {
                    (0..rows_b).flat_map(move |r| {
                        (u * fan..(u + 1) * fan)
                            .flat_map(move |c| (0..inner_b).map(move |k| (r * inputs_b + c) * inner_b + k))
                    })
                };
                for u in 0..units {
                    let row = u * per_row..(u + 1) * per_row;
                    let row_dead = ma.weights[row.clone()].iter().all(|&k| !k);
                    let out_dead = outgoing(u).all(|i| !mb.weights[i]);
                    if row_dead && silent && !out_dead {
                        outgoing(u).for_each(|i| mb.weights[i] = false);
                        changed = true;
                    }
                    if out_dead && !row_dead {
                        ma.weights[row].fill(false);
                        changed = true;
                    }
                }
            }
            masks[a] = Some(ma);
            masks[b] = Some(mb);
        }
        if !changed {
            return;
        }
    }
}

fn gamma_summary(groups: &[LayerGroups]) -> (usize, f64, f64) {
    let gammas: Vec<f64> = groups.iter().flat_map(LayerGroups::alive_gammas).collect();
    let (min, median) = min_median(&gammas);
    (gammas.len(), min, median)
}

/// Pretrains, then alternates group-penalized training with closed-form
/// group variance updates and mask pruning. Pretraining epochs are recorded
/// as iteration 0.
pub fn run_compression(
    mut layers: Vec<Layer>,
    train: &Dataset,
    test: &Dataset,
    config: &SearchConfig,
    plans: &[CompressionPlan],
) -> Result<CompressionOutcome> {
    config.check_runnable()?;
    let limited;
    let train = match config.compress.train_limit {
        0 => train,
        n => {
            limited = train.head(n);
            &limited
        }
    };
    let mut groups = build_groups(&layers, plans)?;
    let mut masks = full_masks(&layers);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Momentum::new();
    let step = net_step_config(config);
    let kind = energy_kind(&train.targets);
    let mut report = SearchReport::new(SearchMode::Compress, config.seed);

    for epoch in 1..=config.compress.pretrain_epochs {
        let loss = net_epoch(&mut layers, &masks, &mut optimizer, train, &[], &step, config.batch_size, &mut rng)?;
        let (alive, min_gamma, median_gamma) = gamma_summary(&groups);
        report.rows.push(MetricsRow {
            iteration: 0,
            epoch,
            loss,
            test_error: net_metric(&layers, test)?,
            alive_edges: alive,
            min_gamma,
            median_gamma,
            entropy_pruned: 0,
            cascade_pruned: 0,
        });
    }

    for iteration in 1..=config.t_max {
        let pens = penalties(&groups);
        for epoch in 1..=config.epochs_per_iteration {
            let loss = net_epoch(&mut layers, &masks, &mut optimizer, train, &pens, &step, config.batch_size, &mut rng)?;
            let (alive, min_gamma, median_gamma) = gamma_summary(&groups);
            report.rows.push(MetricsRow {
                iteration,
                epoch,
                loss,
                test_error: net_metric(&layers, test)?,
                alive_edges: alive,
                min_gamma,
                median_gamma,
                entropy_pruned: 0,
                cascade_pruned: 0,
            });
        }

        let idx = curvature_indices(train.len(), config.curvature_batch, &mut rng);
        let (x, t) = train.batch(&idx);
        let (_, _, out, caches) = nn::energy_and_grads(&layers, &x, &t, kind)?;
        let curvature = layer_hessians(&layers, &caches, &out, kind, config.hessian_mode)?;
        let previous: Vec<f64> = groups.iter().flat_map(|g| g.states.iter().map(|s| s.gamma)).collect();
        for lg in groups.iter_mut() {
            let mut hess = curvature.weight_hessians[lg.layer].clone();
            hess.scale(1.0 / config.sigma2);
            let rho = lg.lambda / config.sigma2;
            structural_update(
                &layers[lg.layer].weights,
                &hess,
                &lg.groups,
                &mut lg.states,
                rho,
                config.omega_floor,
                config.switch_cap,
            )?;
        }
        let moved = groups
            .iter()
            .flat_map(|g| g.states.iter())
            .zip(&previous)
            .filter(|(s, _)| !s.pruned)
            .map(|(s, &p)| (s.gamma - p).abs())
            .fold(0.0, f64::max);

        let pruned = prune_groups(&layers, &mut groups, &mut masks, config.prune_threshold);
        for (layer, mask) in layers.iter_mut().zip(&masks) {
            if let Some(m) = mask {
                apply_mask(layer, m)?;
            }
        }
        check_masks(&layers, &masks)?;

        let (alive, min_gamma, median_gamma) = gamma_summary(&groups);
        let row = report.rows.last_mut().expect("at least one epoch per iteration");
        row.alive_edges = alive;
        row.min_gamma = min_gamma;
        row.median_gamma = median_gamma;
        row.entropy_pruned = pruned.entropy.len();
        row.cascade_pruned = pruned.cascade.len();
        let quiet = pruned.total() == 0 && moved < config.early_stop_tolerance;
        report.prune_events.push(pruned);
        report.iterations_run = iteration;
        if quiet {
            report.early_stopped = true;
            break;
        }
    }
    Ok(CompressionOutcome {
        layers,
        masks,
        groups,
        report,
    })
}

/// Trains the surviving weights without the group penalty, keeping masked
/// weights at zero.
pub fn retrain_net(
    layers: &mut [Layer],
    masks: &[Option<LayerMask>],
    train: &Dataset,
    test: &Dataset,
    config: &SearchConfig,
) -> Result<RetrainReport> {
    config.check_runnable()?;
    check_masks(layers, masks)?;
    for (layer, mask) in layers.iter_mut().zip(masks) {
        if let Some(m) = mask {
            apply_mask(layer, m)?;
        }
    }
    let limited;
    let train = match config.compress.train_limit {
        0 => train,
        n => {
            limited = train.head(n);
            &limited
        }
    };
    let before = net_metric(layers, test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut optimizer = Momentum::new();
    let step = net_step_config(config);
    let mut final_loss = f64::NAN;
    for _ in 0..config.retrain_epochs {
        final_loss = net_epoch(layers, masks, &mut optimizer, train, &[], &step, config.batch_size, &mut rng)?;
    }
    Ok(RetrainReport {
        epochs: config.retrain_epochs,
        before,
        after: net_metric(layers, test)?,
        final_loss,
    })
}
