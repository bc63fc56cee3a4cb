//! Backward recursion of pre-activation Hessians through a layer stack.

use crate::error::{Error, Result};
use crate::nn::{pool_window, softmax_row, EnergyKind, Layer, LayerCache, LayerKind};
use crate::tensor::Tensor;

use super::HessianMode;

/// Curvature of the batch-mean energy for every layer of a stack.
#[derive(Debug, Clone)]
pub struct CurvatureCache {
    /// Exact mode: batch-mean `n×n` pre-activation Hessian per layer.
    /// Approximate mode: batch-mean diagonal of length `n`, clamped at zero.
    pub preact_hessians: Vec<Tensor>,
    /// Weight-Hessian diagonal per layer, shaped like the weights (empty for pooling).
    /// Values are not clamped; consumers clamp negatives before use.
    pub weight_hessians: Vec<Tensor>,
}

/// Per-sample Hessian of the loss w.r.t. the network output, row-major `n×n`.
pub fn loss_hessian_seed(kind: EnergyKind, output_row: &[f64]) -> Vec<f64> {
    let n = output_row.len();
    let mut h = vec![0.0; n * n];
    match kind {
        EnergyKind::Mse => {
            for i in 0..n {
                h[i * n + i] = 1.0;
            }
        }
        EnergyKind::SoftmaxCrossEntropy => {
            let p = softmax_row(output_row);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { p[i] - p[i] * p[j] } else { -p[i] * p[j] };
                }
            }
        }
    }
    h
}

/// Diagonal of [`loss_hessian_seed`].
pub fn loss_hessian_seed_diag(kind: EnergyKind, output_row: &[f64]) -> Vec<f64> {
    match kind {
        EnergyKind::Mse => vec![1.0; output_row.len()],
        EnergyKind::SoftmaxCrossEntropy => softmax_row(output_row).iter().map(|&p| p - p * p).collect(),
    }
}

fn offsets(caches: &[LayerCache]) -> Result<Vec<&Tensor>> {
    caches
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.offset
                .as_ref()
                .ok_or_else(|| Error::MissingCache(format!("layer {i}: backward pass not run")))
        })
        .collect()
}

/// Weight-Hessian diagonals and pre-activation Hessians for a layer stack.
///
/// `caches` must come from a forward and backward pass on the same batch
/// that produced `output`.
pub fn layer_hessians(
    layers: &[Layer],
    caches: &[LayerCache],
    output: &Tensor,
    kind: EnergyKind,
    mode: HessianMode,
) -> Result<CurvatureCache> {
    if layers.len() != caches.len() || layers.is_empty() {
        return Err(Error::MissingCache(format!(
            "{} caches for {} layers",
            caches.len(),
            layers.len()
        )));
    }
    let offsets = offsets(caches)?;
    match mode {
        HessianMode::Exact => exact(layers, caches, &offsets, output, kind),
        HessianMode::Approx => approx(layers, caches, &offsets, output, kind),
    }
}

/// Dense-layer convenience wrapper: exact recursion.
pub fn fc_hessian_exact(layers: &[Layer], caches: &[LayerCache], output: &Tensor, kind: EnergyKind) -> Result<CurvatureCache> {
    layer_hessians(layers, caches, output, kind, HessianMode::Exact)
}

/// Dense-layer convenience wrapper: diagonal recursion.
pub fn fc_hessian_diag(layers: &[Layer], caches: &[LayerCache], output: &Tensor, kind: EnergyKind) -> Result<CurvatureCache> {
    layer_hessians(layers, caches, output, kind, HessianMode::Approx)
}

/// Convolution stacks use the same recursion; conv layers are lowered through im2col.
pub fn conv_hessian(
    layers: &[Layer],
    caches: &[LayerCache],
    output: &Tensor,
    kind: EnergyKind,
    mode: HessianMode,
) -> Result<CurvatureCache> {
    layer_hessians(layers, caches, output, kind, mode)
}

/// Jacobian of a layer's linear part for one sample, row-major `n_out×n_in`.
fn dense_jacobian(layer: &Layer, cache: &LayerCache, sample: usize) -> Result<Vec<f64>> {
    let n_in = cache.input.row_len();
    let n_out = cache.preact.row_len();
    let mut jac = vec![0.0; n_out * n_in];
    match layer.kind {
        LayerKind::FullyConnected { .. } => jac.copy_from_slice(layer.weights.data()),
        LayerKind::Conv2d(g) => {
            let win = layer.window(cache.input.shape())?;
            let (oh, ow) = win.output_hw()?;
            let positions = oh * ow;
            let (m, k) = g.kernel;
            let q_len = win.patch_len();
            for c in 0..g.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = c * positions + oy * ow + ox;
                        for q in 0..q_len {
                            let ci = q / (m * k);
                            let ky = (q / k) % m;
                            let kx = q % k;
                            let y = (oy * win.stride + ky) as isize - win.padding as isize;
                            let x = (ox * win.stride + kx) as isize - win.padding as isize;
                            if y < 0 || x < 0 || y as usize >= win.height || x as usize >= win.width {
                                continue;
                            }
                            let col = (ci * win.height + y as usize) * win.width + x as usize;
                            jac[row * n_in + col] += layer.weights.data()[c * q_len + q];
                        }
                    }
                }
            }
        }
        LayerKind::MaxPool(_) => {
            let idx = cache
                .argmax
                .as_ref()
                .ok_or_else(|| Error::MissingCache("max-pool selection".into()))?;
            for o in 0..n_out {
                let src = idx[sample * n_out + o] - sample * n_in;
                jac[o * n_in + src] = 1.0;
            }
        }
        LayerKind::AvgPool(_) => {
            let win = layer.window(cache.input.shape())?;
            let (oh, ow) = win.output_hw()?;
            let plane = win.height * win.width;
            let scale = 1.0 / (win.kernel.0 * win.kernel.1) as f64;
            let channels = cache.input.shape()[1];
            for c in 0..channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = (c * oh + oy) * ow + ox;
                        for i in pool_window(&win, oy, ox) {
                            jac[row * n_in + c * plane + i] += scale;
                        }
                    }
                }
            }
        }
    }
    Ok(jac)
}

fn exact(
    layers: &[Layer],
    caches: &[LayerCache],
    offsets: &[&Tensor],
    output: &Tensor,
    kind: EnergyKind,
) -> Result<CurvatureCache> {
    let batch = output.rows();
    let mut preact: Vec<Vec<f64>> = caches
        .iter()
        .map(|c| vec![0.0; c.preact.row_len() * c.preact.row_len()])
        .collect();
    let mut weight: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let sample_invariant: Vec<Option<Vec<f64>>> = layers
        .iter()
        .zip(caches)
        .map(|(l, c)| match l.kind {
            LayerKind::MaxPool(_) => Ok(None),
            _ => dense_jacobian(l, c, 0).map(Some),
        })
        .collect::<Result<_>>()?;

    for s in 0..batch {
        let mut ha = loss_hessian_seed(kind, output.row(s));
        for l in (0..layers.len()).rev() {
            let cache = &caches[l];
            let n = cache.preact.row_len();
            let slope = cache.slope.row(s);
            let d = offsets[l].row(s);
            let mut g = vec![0.0; n * n];
            for j in 0..n {
                for j2 in 0..n {
                    g[j * n + j2] = (slope[j] * ha[j * n + j2]) * slope[j2];
                }
                g[j * n + j] += d[j];
            }
            for (acc, &v) in preact[l].iter_mut().zip(&g) {
                *acc += v;
            }
            match layers[l].kind {
                LayerKind::FullyConnected { in_features, .. } => {
                    let a = cache.input.row(s);
                    for j in 0..n {
                        for k in 0..in_features {
                            weight[l][j * in_features + k] += (a[k] * a[k]) * g[j * n + j];
                        }
                    }
                }
                LayerKind::Conv2d(geom) => {
                    let cols = cache
                        .cols
                        .as_ref()
                        .ok_or_else(|| Error::MissingCache(format!("layer {l}: im2col patches")))?;
                    let q_len = cols.shape()[1];
                    let positions = n / geom.out_channels;
                    let rows = &cols.data()[s * positions * q_len..(s + 1) * positions * q_len];
                    for c in 0..geom.out_channels {
                        for q in 0..q_len {
                            let mut acc = 0.0;
                            for p in 0..positions {
                                for p2 in 0..positions {
                                    acc += (rows[p * q_len + q] * rows[p2 * q_len + q])
                                        * g[(c * positions + p) * n + c * positions + p2];
                                }
                            }
                            weight[l][c * q_len + q] += acc;
                        }
                    }
                }
                LayerKind::MaxPool(_) | LayerKind::AvgPool(_) => {}
            }
            if l == 0 {
                break;
            }
            let n_in = cache.input.row_len();
            let owned;
            let jac = match &sample_invariant[l] {
                Some(j) => j,
                None => {
                    owned = dense_jacobian(&layers[l], cache, s)?;
                    &owned
                }
            };
            let mut t = vec![0.0; n * n_in];
            for j in 0..n {
                for k in 0..n_in {
                    let mut acc = 0.0;
                    for j2 in 0..n {
                        acc += g[j * n + j2] * jac[j2 * n_in + k];
                    }
                    t[j * n_in + k] = acc;
                }
            }
            let mut next = vec![0.0; n_in * n_in];
            for k in 0..n_in {
                for k2 in 0..n_in {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += jac[j * n_in + k] * t[j * n_in + k2];
                    }
                    next[k * n_in + k2] = acc;
                }
            }
            ha = next;
        }
    }
    let b = batch as f64;
    let preact_hessians = preact
        .into_iter()
        .zip(caches)
        .map(|(v, c)| {
            let n = c.preact.row_len();
            Tensor::from_vec(&[n, n], v.into_iter().map(|x| x / b).collect())
        })
        .collect::<Result<_>>()?;
    let weight_hessians = weight
        .into_iter()
        .zip(layers)
        .map(|(v, layer)| Tensor::from_vec(layer.weights.shape(), v.into_iter().map(|x| x / b).collect()))
        .collect::<Result<_>>()?;
    Ok(CurvatureCache {
        preact_hessians,
        weight_hessians,
    })
}

fn approx(
    layers: &[Layer],
    caches: &[LayerCache],
    offsets: &[&Tensor],
    output: &Tensor,
    kind: EnergyKind,
) -> Result<CurvatureCache> {
    let batch = output.rows();
    // Per-sample diagonal of the Hessian w.r.t. the current layer's output.
    let mut ha = Vec::with_capacity(batch * output.row_len());
    for s in 0..batch {
        ha.extend(loss_hessian_seed_diag(kind, output.row(s)));
    }
    let mut preact_hessians = vec![Tensor::empty(); layers.len()];
    let mut weight_hessians = vec![Tensor::empty(); layers.len()];
    for l in (0..layers.len()).rev() {
        let step = diag_step(&layers[l], &caches[l], offsets[l], &ha, l > 0)?;
        preact_hessians[l] = step.preact_mean;
        weight_hessians[l] = step.weight;
        if let Some(next) = step.next {
            ha = next;
        }
    }
    Ok(CurvatureCache {
        preact_hessians,
        weight_hessians,
    })
}

pub(crate) struct DiagStep {
    /// Batch-mean pre-activation diagonal, clamped at zero.
    pub preact_mean: Tensor,
    pub weight: Tensor,
    /// Per-sample diagonal w.r.t. the layer input.
    pub next: Option<Vec<f64>>,
}

/// One layer of the diagonal recursion. `ha` holds the per-sample diagonal
/// Hessian w.r.t. the layer output, sample-major.
pub(crate) fn diag_step(layer: &Layer, cache: &LayerCache, offset: &Tensor, ha: &[f64], with_next: bool) -> Result<DiagStep> {
    let batch = cache.input.rows();
    let b = batch as f64;
    let n = cache.preact.row_len();
    let n_in = cache.input.row_len();
    if ha.len() != batch * n {
        return Err(Error::Shape(format!("output Hessian of length {} for {batch}x{n}", ha.len())));
    }
    let g: Vec<f64> = (0..batch * n)
        .map(|i| (cache.slope.data()[i] * ha[i]) * cache.slope.data()[i] + offset.data()[i])
        .collect();
    let mut mean = vec![0.0; n];
    for s in 0..batch {
        for (m, &v) in mean.iter_mut().zip(&g[s * n..(s + 1) * n]) {
            *m += v;
        }
    }
    let preact_mean = Tensor::from_vec(&[n], mean.iter().map(|&v| (v / b).max(0.0)).collect())?;
    let mut next = vec![0.0; batch * n_in];
    let weight = match layer.kind {
        LayerKind::FullyConnected { in_features, .. } => {
            let mut hw = vec![0.0; n * in_features];
            for s in 0..batch {
                let a = cache.input.row(s);
                let gs = &g[s * n..(s + 1) * n];
                for j in 0..n {
                    for k in 0..in_features {
                        hw[j * in_features + k] += (a[k] * a[k]) * gs[j];
                    }
                }
            }
            if with_next {
                let w = layer.weights.data();
                for s in 0..batch {
                    let gs = &g[s * n..(s + 1) * n];
                    let out = &mut next[s * n_in..(s + 1) * n_in];
                    for (k, o) in out.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for j in 0..n {
                            let wjk = w[j * in_features + k];
                            acc += wjk * (gs[j] * wjk);
                        }
                        *o = acc;
                    }
                }
            }
            Tensor::from_vec(layer.weights.shape(), hw.into_iter().map(|x| x / b).collect())?
        }
        LayerKind::Conv2d(geom) => {
            let cols = cache
                .cols
                .as_ref()
                .ok_or_else(|| Error::MissingCache("im2col patches".into()))?;
            let q_len = cols.shape()[1];
            let cout = geom.out_channels;
            let positions = n / cout;
            let rows = (batch * positions) as f64;
            let mut mean_g = vec![0.0; cout];
            for s in 0..batch {
                for c in 0..cout {
                    for p in 0..positions {
                        mean_g[c] += g[s * n + c * positions + p];
                    }
                }
            }
            mean_g.iter_mut().for_each(|v| *v /= rows);
            let mut mean_m2 = vec![0.0; q_len];
            for r in 0..batch * positions {
                for (acc, &v) in mean_m2.iter_mut().zip(&cols.data()[r * q_len..(r + 1) * q_len]) {
                    *acc += v * v;
                }
            }
            mean_m2.iter_mut().for_each(|v| *v /= rows);
            let mut hw = vec![0.0; cout * q_len];
            for c in 0..cout {
                for q in 0..q_len {
                    hw[c * q_len + q] = positions as f64 * mean_m2[q] * mean_g[c];
                }
            }
            if with_next {
                let w = layer.weights.data();
                let patch: Vec<f64> = (0..q_len)
                    .map(|q| (0..cout).map(|c| w[c * q_len + q] * w[c * q_len + q] * mean_g[c]).sum())
                    .collect();
                let win = layer.window(cache.input.shape())?;
                let mut replicated = Tensor::zeros(&[batch * positions, q_len]);
                for r in 0..batch * positions {
                    replicated.row_mut(r).copy_from_slice(&patch);
                }
                let back = crate::nn::col2im(&replicated, batch, &win)?;
                next.copy_from_slice(back.data());
            }
            Tensor::from_vec(layer.weights.shape(), hw)?
        }
        LayerKind::MaxPool(_) => {
            let idx = cache
                .argmax
                .as_ref()
                .ok_or_else(|| Error::MissingCache("max-pool selection".into()))?;
            for (o, &src) in idx.iter().enumerate() {
                next[src] += g[o];
            }
            Tensor::empty()
        }
        LayerKind::AvgPool(_) => {
            let win = layer.window(cache.input.shape())?;
            let (oh, ow) = win.output_hw()?;
            let plane = win.height * win.width;
            let scale = 1.0 / (win.kernel.0 * win.kernel.1) as f64;
            let planes = batch * cache.input.shape()[1];
            for pl in 0..planes {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let v = g[(pl * oh + oy) * ow + ox];
                        for i in pool_window(&win, oy, ox) {
                            next[pl * plane + i] += scale * (v * scale);
                        }
                    }
                }
            }
            Tensor::empty()
        }
    };
    Ok(DiagStep {
        preact_mean,
        weight,
        next: with_next.then_some(next),
    })
}

/// Multiply-accumulate counts of one dense layer with an `n×m` weight matrix,
/// for the full-matrix and the diagonal recursion respectively.
pub fn dense_layer_macs(n: u64, m: u64) -> (u64, u64) {
    let exact = n * (2 * m * m + 2 * n * n + 4 * m * n + 3 * m - 1);
    let approx = n * (2 + 4 * m);
    (exact, approx)
}
