//! Architecture search over a gated supergraph.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{curvature_indices, energy_kind, epoch_batches, graph_metric, min_median, RetrainReport, SearchMode, SearchReport};
use crate::bayes::{
    group_update, penalized_sgd_step, update_omega, update_posterior_variance, update_switch, ArchPenalty, Momentum,
    SearchConfig, StepConfig,
};
use crate::curvature::arch_scalar_hessian;
use crate::error::{Error, Result};
use crate::graph::{
    graph_backward, graph_forward, propagate_dependency_prune, prune_dead_ends, prune_step, recompute_gammas,
    validate_groups, EdgeId, GroupId, OpKind, PruneReport, SuperGraph,
};
use crate::io::{Dataset, MetricsRow};
use crate::nn::energy;

/// Hyper variables of every edge at the end of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSnapshot {
    pub iteration: usize,
    pub switch: Vec<f64>,
    pub omega: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alive: Vec<bool>,
}

impl HyperSnapshot {
    fn of(graph: &SuperGraph, iteration: usize) -> Self {
        HyperSnapshot {
            iteration,
            switch: graph.edges.iter().map(|e| e.switch).collect(),
            omega: graph.edges.iter().map(|e| e.omega).collect(),
            gamma: graph.edges.iter().map(|e| e.gamma).collect(),
            alive: graph.alive_mask(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphOutcome {
    pub graph: SuperGraph,
    pub report: SearchReport,
    pub snapshots: Vec<HyperSnapshot>,
}

fn searchable(graph: &SuperGraph) -> impl Iterator<Item = (EdgeId, &crate::graph::Edge)> {
    graph.alive_edges().filter(|(_, e)| e.op != OpKind::ZeroGateIdentity)
}

fn step_config(config: &SearchConfig, freeze_w: bool, freeze_ops: bool) -> StepConfig {
    StepConfig {
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        lambda_w: config.lambda_w,
        weight_decay: config.lambda,
        l1_mode: config.l1_mode,
        freeze_w,
        freeze_ops,
    }
}

/// One pass over `train`; returns the mean objective.
fn train_epoch(
    graph: &mut SuperGraph,
    optimizer: &mut Momentum,
    train: &Dataset,
    penalty: ArchPenalty<'_>,
    step: &StepConfig,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let kind = energy_kind(&train.targets);
    let mut total = 0.0;
    for idx in epoch_batches(train.len(), batch_size, rng) {
        let (x, t) = train.batch(&idx);
        let stats = penalized_sgd_step(graph, optimizer, &x, &t, kind, penalty, step)?;
        total += stats.objective() * idx.len() as f64;
    }
    Ok(total / train.len().max(1) as f64)
}

/// Sets `hess` and `c` on every alive edge from a fresh curvature batch.
fn refresh_curvature(graph: &mut SuperGraph, train: &Dataset, config: &SearchConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let kind = energy_kind(&train.targets);
    let idx = curvature_indices(train.len(), config.curvature_batch, rng);
    let (x, t) = train.batch(&idx);
    let mut cache = graph_forward(graph, &x)?;
    let (_, grad) = energy(cache.output(graph), &t, kind)?;
    let grads = graph_backward(graph, &mut cache, &grad)?;
    let hess = arch_scalar_hessian(graph, &cache, &grads, kind, config.hessian_mode)?;
    for (e, h) in graph.edges.iter_mut().zip(hess) {
        if e.alive {
            e.hess = h / config.sigma2;
            e.posterior = update_posterior_variance(e.gamma, e.hess)?;
        }
    }
    Ok(())
}

fn scalar_updates(graph: &mut SuperGraph, config: &SearchConfig) -> Result<()> {
    let rho = config.lambda_w / config.sigma2;
    for e in graph.edges.iter_mut().filter(|e| e.alive) {
        e.omega = update_omega(e.gamma, e.posterior, config.omega_floor)?;
        e.switch = update_switch(e.scale, rho * e.omega, config.omega_floor, config.switch_cap);
    }
    Ok(())
}

fn group_updates(graph: &mut SuperGraph, groups: &BTreeMap<GroupId, Vec<EdgeId>>, config: &SearchConfig) -> Result<()> {
    let rho = config.lambda_w / config.sigma2;
    for members in groups.values() {
        let alive: Vec<EdgeId> = members.iter().copied().filter(|&i| graph.edges[i].alive).collect();
        if alive.is_empty() {
            continue;
        }
        let scales: Vec<f64> = alive.iter().map(|&i| graph.edges[i].scale).collect();
        let gamma: Vec<f64> = alive.iter().map(|&i| graph.edges[i].gamma).collect();
        let posterior: Vec<f64> = alive.iter().map(|&i| graph.edges[i].posterior).collect();
        let update = group_update(&scales, &gamma, &posterior, rho, config.omega_floor, config.switch_cap)?;
        for &i in &alive {
            graph.edges[i].switch = update.switch;
            graph.edges[i].omega = update.omega;
        }
    }
    Ok(())
}

/// Forces every group to a single alive flag: all members die with any one,
/// except that on the first pass members of a restored path revive their
/// whole group. Cascades are re-run until the masks settle.
fn tie_masks(graph: &mut SuperGraph, groups: &BTreeMap<GroupId, Vec<EdgeId>>, report: &mut PruneReport) {
    let mut honour_restored = true;
    loop {
        let mut changed = false;
        for members in groups.values() {
            let restored = honour_restored && members.iter().any(|i| report.restored.contains(i));
            let keep = restored || members.iter().all(|&i| graph.edges[i].alive);
            for &i in members {
                if graph.edges[i].alive != keep {
                    if keep {
                        report.entropy.retain(|&k| k != i);
                        report.cascade.retain(|&k| k != i);
                    } else {
                        report.cascade.push(i);
                    }
                    graph.edges[i].alive = keep;
                    changed = true;
                }
            }
        }
        honour_restored = false;
        report.cascade.extend(propagate_dependency_prune(graph));
        report.cascade.extend(prune_dead_ends(graph));
        let consistent = groups
            .values()
            .all(|m| m.iter().all(|&i| graph.edges[i].alive == graph.edges[m[0]].alive));
        if !changed && consistent {
            return;
        }
    }
}

fn prune(graph: &mut SuperGraph, config: &SearchConfig, groups: Option<&BTreeMap<GroupId, Vec<EdgeId>>>) -> PruneReport {
    let mut report = prune_step(graph, config.prune_threshold);
    let dead = prune_dead_ends(graph);
    report.cascade.extend(dead);
    if let Some(groups) = groups {
        tie_masks(graph, groups, &mut report);
    }
    report
}

fn run(
    mut graph: SuperGraph,
    train: &Dataset,
    test: &Dataset,
    config: &SearchConfig,
    mode: SearchMode,
) -> Result<GraphOutcome> {
    config.check_runnable()?;
    let groups = match mode {
        SearchMode::ProxyCell => Some(validate_groups(&graph)?),
        _ => None,
    };
    let group_lists: Vec<Vec<EdgeId>> = groups.as_ref().map(|g| g.values().cloned().collect()).unwrap_or_default();
    let penalty = match mode {
        SearchMode::ProxyCell => ArchPenalty::GroupL2(&group_lists),
        _ => ArchPenalty::L1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Momentum::new();
    let step = step_config(config, false, !config.train_ops);
    let mut report = SearchReport::new(mode, config.seed);
    let mut snapshots = Vec::new();
    for iteration in 1..=config.t_max {
        for epoch in 1..=config.epochs_per_iteration {
            let loss = train_epoch(&mut graph, &mut optimizer, train, penalty, &step, config.batch_size, &mut rng)?;
            let gammas: Vec<f64> = searchable(&graph).map(|(_, e)| e.gamma).collect();
            let (min_gamma, median_gamma) = min_median(&gammas);
            report.rows.push(MetricsRow {
                iteration,
                epoch,
                loss,
                test_error: graph_metric(&graph, test)?,
                alive_edges: gammas.len(),
                min_gamma,
                median_gamma,
                entropy_pruned: 0,
                cascade_pruned: 0,
            });
        }
        let previous: Vec<f64> = graph.edges.iter().map(|e| e.gamma).collect();
        refresh_curvature(&mut graph, train, config, &mut rng)?;
        match &groups {
            Some(g) => group_updates(&mut graph, g, config)?,
            None => scalar_updates(&mut graph, config)?,
        }
        recompute_gammas(&mut graph)?;
        let moved = graph
            .edges
            .iter()
            .zip(&previous)
            .filter(|(e, _)| e.alive)
            .map(|(e, &p)| (e.gamma - p).abs())
            .fold(0.0, f64::max);
        let pruned = prune(&mut graph, config, groups.as_ref());
        report.degenerate |= pruned.degenerate;
        let gammas: Vec<f64> = searchable(&graph).map(|(_, e)| e.gamma).collect();
        let (min_gamma, median_gamma) = min_median(&gammas);
        let row = report.rows.last_mut().expect("at least one epoch per iteration");
        row.alive_edges = gammas.len();
        row.min_gamma = min_gamma;
        row.median_gamma = median_gamma;
        row.entropy_pruned = pruned.entropy.len();
        row.cascade_pruned = pruned.cascade.len();
        let quiet = pruned.total() == 0 && moved < config.early_stop_tolerance;
        report.prune_events.push(pruned);
        snapshots.push(HyperSnapshot::of(&graph, iteration));
        report.iterations_run = iteration;
        if quiet {
            report.early_stopped = true;
            break;
        }
    }
    Ok(GraphOutcome {
        graph,
        report,
        snapshots,
    })
}

/// Per-edge search: train on the reweighted-ℓ1 objective, update each edge's
/// variances in closed form, prune by entropy and dependency, repeat.
pub fn run_proxyless(graph: SuperGraph, train: &Dataset, test: &Dataset, config: &SearchConfig) -> Result<GraphOutcome> {
    run(graph, train, test, config, SearchMode::Proxyless)
}

/// Tied-cell search: every group of edges (one slot per cell) shares its
/// switch, reweighting coefficient and prune decision.
pub fn run_proxy_cells(graph: SuperGraph, train: &Dataset, test: &Dataset, config: &SearchConfig) -> Result<GraphOutcome> {
    if graph.edges.iter().any(|e| e.group.is_none()) {
        return Err(Error::Graph("proxy search needs every edge assigned to a cell group".into()));
    }
    run(graph, train, test, config, SearchMode::ProxyCell)
}

/// Fixes every alive `w` at one and trains the surviving operations.
pub fn retrain_graph(graph: &mut SuperGraph, train: &Dataset, test: &Dataset, config: &SearchConfig) -> Result<RetrainReport> {
    config.check_runnable()?;
    for e in graph.edges.iter_mut().filter(|e| e.alive) {
        e.scale = 1.0;
    }
    let before = graph_metric(graph, test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut optimizer = Momentum::new();
    let step = step_config(config, true, false);
    let mut final_loss = f64::NAN;
    for _ in 0..config.retrain_epochs {
        final_loss = train_epoch(graph, &mut optimizer, train, ArchPenalty::None, &step, config.batch_size, &mut rng)?;
    }
    Ok(RetrainReport {
        epochs: config.retrain_epochs,
        before,
        after: graph_metric(graph, test)?,
        final_loss,
    })
}
