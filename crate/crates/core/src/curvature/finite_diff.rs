use crate::error::{Error, Result};
use crate::nn::{energy, forward, EnergyKind, Layer, Targets};
use crate::tensor::Tensor;

/// Central second differences `(E(θ+h) − 2E(θ) + E(θ−h)) / h²` for the
/// selected coordinates of `params`.
pub fn finite_diff_hessian(
    mut energy_at: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    selected: &[usize],
    step: f64,
) -> Result<Vec<f64>> {
    if !(1e-6..=1e-3).contains(&step) {
        return Err(Error::Hyper(format!("finite-difference step {step} outside [1e-6, 1e-3]")));
    }
    let mut theta = params.to_vec();
    let centre = energy_at(&theta)?;
    if !centre.is_finite() {
        return Err(Error::NonFinite("energy at the base point".into()));
    }
    let mut out = Vec::with_capacity(selected.len());
    for &i in selected {
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = energy_at(&theta)?;
        theta[i] = orig - step;
        let minus = energy_at(&theta)?;
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("energy around parameter {i}")));
        }
        out.push((plus - 2.0 * centre + minus) / (step * step));
    }
    Ok(out)
}

/// Second differences of the batch-mean energy w.r.t. every weight of one layer.
pub fn layer_weight_fd(
    layers: &[Layer],
    x: &Tensor,
    targets: &Targets,
    kind: EnergyKind,
    layer: usize,
    step: f64,
) -> Result<Tensor> {
    let mut work = layers.to_vec();
    let base = layers[layer].weights.data().to_vec();
    let all: Vec<usize> = (0..base.len()).collect();
    let diag = finite_diff_hessian(
        |theta| {
            work[layer].weights.data_mut().copy_from_slice(theta);
            let (out, _) = forward(&work, x)?;
            Ok(energy(&out, targets, kind)?.0)
        },
        &base,
        &all,
        step,
    )?;
    Tensor::from_vec(layers[layer].weights.shape(), diag)
}
