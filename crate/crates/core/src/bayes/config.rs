//! Run configuration with documented defaults.

use serde::{Deserialize, Serialize};

use super::groups::GroupPattern;
use super::sgd::L1Mode;
use super::update::{OMEGA_FLOOR, SWITCH_CAP};
use crate::curvature::HessianMode;
use crate::error::{Error, Result};
use crate::graph::PRUNE_THRESHOLD;

/// Settings shared by every search mode. Every field has a default, so an
/// empty JSON object is a complete configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Sparsity intensity on architecture scalars.
    pub lambda_w: f64,
    /// ℓ2 decay on operation weights.
    pub lambda: f64,
    /// Observation noise variance; curvature is divided by it.
    pub sigma2: f64,
    /// Outer iterations.
    pub t_max: usize,
    pub epochs_per_iteration: usize,
    pub batch_size: usize,
    /// Samples drawn once per iteration for curvature.
    pub curvature_batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub omega_floor: f64,
    pub switch_cap: f64,
    pub prune_threshold: f64,
    pub hessian_mode: HessianMode,
    pub l1_mode: L1Mode,
    /// Epochs of retraining with `w` frozen at one.
    pub retrain_epochs: usize,
    /// Stop when nothing is pruned and no γ moves more than this.
    pub early_stop_tolerance: f64,
    /// Train op weights during search (architecture scalars always train).
    pub train_ops: bool,
    pub task: TaskConfig,
    pub compress: CompressConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda_w: 0.01,
            lambda: 0.01,
            sigma2: 0.01,
            t_max: 20,
            epochs_per_iteration: 20,
            batch_size: 32,
            curvature_batch: 256,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
            omega_floor: OMEGA_FLOOR,
            switch_cap: SWITCH_CAP,
            prune_threshold: PRUNE_THRESHOLD,
            hessian_mode: HessianMode::Approx,
            l1_mode: L1Mode::Subgradient,
            retrain_epochs: 5,
            early_stop_tolerance: 1e-6,
            train_ops: false,
            task: TaskConfig::default(),
            compress: CompressConfig::default(),
        }
    }
}

/// Planted-subgraph regression generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub nodes: usize,
    /// Feature width of every node.
    pub features: usize,
    /// Candidate ops per ordered node pair.
    pub ops_per_pair: usize,
    /// Edges used by the generating subgraph.
    pub planted: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Cells stacked by `proxy-search`.
    pub cells: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            nodes: 4,
            features: 4,
            ops_per_pair: 2,
            planted: 3,
            train_samples: 1024,
            test_samples: 256,
            cells: 2,
        }
    }
}

/// Group penalty strength of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Strength {
    Uniform(f64),
    PerPattern(Vec<f64>),
}

impl Strength {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Strength::Uniform(v) => vec![*v],
            Strength::PerPattern(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Network {
    /// 784-300-100-10 ReLU MLP.
    #[default]
    Lenet300100,
    /// conv(20,5) pool conv(50,5) pool fc500 fc10.
    Lenet5,
}

/// Structured compression of a LeNet on MNIST.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressConfig {
    pub network: Network,
    /// Per weighted layer penalty strength, either one value for all of the
    /// layer's patterns or one value per pattern; `None` uses the network preset.
    pub layer_lambdas: Option<Vec<Strength>>,
    /// Per weighted layer patterns; `None` uses the network preset.
    pub patterns: Option<Vec<Vec<GroupPattern>>>,
    pub weight_decay: f64,
    /// Unpenalized epochs before the first hyper update.
    pub pretrain_epochs: usize,
    /// Use only the first N training images (0 = all).
    pub train_limit: usize,
}

impl Default for CompressConfig {
    fn default() -> Self {
        CompressConfig {
            network: Network::Lenet300100,
            layer_lambdas: None,
            patterns: None,
            weight_decay: 5e-4,
            pretrain_epochs: 2,
            train_limit: 0,
        }
    }
}

fn positive(field: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Config {
            field: field.into(),
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

fn non_negative(field: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Config {
            field: field.into(),
            reason: format!("must be non-negative and finite, got {value}"),
        })
    }
}

fn at_least_one(field: &'static str, value: usize) -> Result<()> {
    if value >= 1 {
        Ok(())
    } else {
        Err(Error::Config {
            field: field.into(),
            reason: "must be at least 1".into(),
        })
    }
}

impl SearchConfig {
    /// Checks user-supplied settings. A zero `lambda_w` is rejected here even
    /// though the search loops accept it.
    pub fn validate(&self) -> Result<()> {
        positive("lambda_w", self.lambda_w)?;
        self.check_runnable()
    }

    /// The weaker check the search loops apply: penalties may be zero.
    pub fn check_runnable(&self) -> Result<()> {
        non_negative("lambda_w", self.lambda_w)?;
        non_negative("lambda", self.lambda)?;
        positive("sigma2", self.sigma2)?;
        positive("learning_rate", self.learning_rate)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config {
                field: "momentum".into(),
                reason: format!("must lie in [0, 1), got {}", self.momentum),
            });
        }
        at_least_one("epochs_per_iteration", self.epochs_per_iteration)?;
        at_least_one("batch_size", self.batch_size)?;
        at_least_one("curvature_batch", self.curvature_batch)?;
        positive("omega_floor", self.omega_floor)?;
        positive("switch_cap", self.switch_cap)?;
        positive("prune_threshold", self.prune_threshold)?;
        non_negative("early_stop_tolerance", self.early_stop_tolerance)?;
        let t = &self.task;
        if t.nodes < 2 {
            return Err(Error::Config {
                field: "task.nodes".into(),
                reason: "need at least an input and an output node".into(),
            });
        }
        at_least_one("task.features", t.features)?;
        at_least_one("task.ops_per_pair", t.ops_per_pair)?;
        at_least_one("task.planted", t.planted)?;
        at_least_one("task.train_samples", t.train_samples)?;
        at_least_one("task.test_samples", t.test_samples)?;
        at_least_one("task.cells", t.cells)?;
        let c = &self.compress;
        non_negative("compress.weight_decay", c.weight_decay)?;
        if let Some(l) = &c.layer_lambdas {
            for v in l.iter().flat_map(Strength::values) {
                non_negative("compress.layer_lambdas", v)?;
            }
        }
        Ok(())
    }
}
