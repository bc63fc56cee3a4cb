//! Dense and convolutional layers with forward and reverse passes.

mod activation;
mod energy;
mod im2col;
mod layer;

pub use activation::Activation;
pub use energy::{classification_error, energy, softmax_row, EnergyKind, Targets};
pub use im2col::{im2col, Window};
pub(crate) use im2col::col2im;
pub use layer::{ConvGeometry, Layer, LayerCache, LayerGrad, LayerKind, PoolGeometry};
pub(crate) use layer::pool_window;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Runs `x` through `layers`, returning the output and one cache per layer.
pub fn forward(layers: &[Layer], x: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
    let mut caches: Vec<LayerCache> = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let input = caches.last().map_or(x, |c| &c.output);
        let cache = layer.forward(i, input)?;
        caches.push(cache);
    }
    let out = caches.last().map_or_else(|| x.clone(), |c| c.output.clone());
    Ok((out, caches))
}

/// Reverse pass from the gradient of the energy w.r.t. the network output.
pub fn backward(layers: &[Layer], caches: &mut [LayerCache], loss_grad: &Tensor) -> Result<(Vec<LayerGrad>, Tensor)> {
    if caches.len() != layers.len() {
        return Err(Error::MissingCache(format!(
            "{} caches for {} layers",
            caches.len(),
            layers.len()
        )));
    }
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = loss_grad.clone();
    for (i, (layer, cache)) in layers.iter().zip(caches.iter_mut()).enumerate().rev() {
        let (lg, dx) = layer.backward(i, cache, &g)?;
        grads.push(lg);
        g = dx;
    }
    grads.reverse();
    Ok((grads, g))
}

/// Energy and parameter gradients of a layer stack on one batch.
pub fn energy_and_grads(
    layers: &[Layer],
    x: &Tensor,
    target: &Targets,
    kind: EnergyKind,
) -> Result<(f64, Vec<LayerGrad>, Tensor, Vec<LayerCache>)> {
    let (out, mut caches) = forward(layers, x)?;
    let (loss, grad_out) = energy(&out, target, kind)?;
    let (grads, _) = backward(layers, &mut caches, &grad_out)?;
    Ok((loss, grads, out, caches))
}
