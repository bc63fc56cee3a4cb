//! Closed-form hyperparameter updates, sparsity penalties and the optimizer.

mod config;
mod groups;
mod sgd;
mod update;

pub use config::{CompressConfig, Network, SearchConfig, Strength, TaskConfig};
pub use groups::{structural_update, weight_groups, GroupPattern, GroupSpec, GroupState};
pub use sgd::{
    apply_mask, net_sgd_step, penalized_sgd_step, ArchPenalty, L1Mode, LayerMask, LayerPenalty, Momentum, StepConfig,
    StepStats,
};
pub use update::{
    group_l2_penalty, group_update, reweighted_l1_penalty, update_omega, update_posterior_variance, update_switch,
    GroupUpdate, OMEGA_FLOOR, SWITCH_CAP,
};
