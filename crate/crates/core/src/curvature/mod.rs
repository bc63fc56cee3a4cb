//! Recursive Hessians of the energy: layer weights, pre-activations and
//! architecture scalars, plus a finite-difference oracle.

mod arch;
mod chain;
mod finite_diff;

pub use arch::arch_scalar_hessian;
pub use chain::{
    conv_hessian, dense_layer_macs, fc_hessian_diag, fc_hessian_exact, layer_hessians, loss_hessian_seed,
    loss_hessian_seed_diag, CurvatureCache,
};
pub use finite_diff::{finite_diff_hessian, layer_weight_fd};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Full per-sample matrices (dense layers and convolutions) and second-order
    /// forward jets (architecture scalars).
    Exact,
    /// Diagonal recursion with batch-averaged convolution terms.
    Approx,
}
