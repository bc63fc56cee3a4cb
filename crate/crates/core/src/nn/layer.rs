use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::im2col::{col2im, im2col_with, Window};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    Conv2d(ConvGeometry),
    MaxPool(PoolGeometry),
    AvgPool(PoolGeometry),
}

/// A linear map (dense, convolution or pooling) followed by a pointwise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    /// `(out, in)` for dense layers, `(C_out, C_in, m, k)` for convolutions, empty for pooling.
    pub weights: Tensor,
    pub bias: Option<Tensor>,
    pub activation: Activation,
}

/// Forward and backward state of one layer for one batch.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Tensor,
    pub preact: Tensor,
    pub output: Tensor,
    /// σ'(preact).
    pub slope: Tensor,
    /// im2col patches of the input for convolutions.
    pub cols: Option<Tensor>,
    /// Flat input index selected by each max-pool output.
    pub argmax: Option<Vec<usize>>,
    pub grad_wrt_output: Option<Tensor>,
    pub grad_wrt_preact: Option<Tensor>,
    /// σ''(preact) times the per-sample loss gradient w.r.t. the output.
    pub offset: Option<Tensor>,
    pub preact_hessian_diag: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

fn uniform_init(rng: &mut impl Rng, shape: &[usize], fan_in: usize, act: Activation) -> Tensor {
    let gain = if act == Activation::Relu { 2f64.sqrt() } else { 1.0 };
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

impl Layer {
    pub fn fully_connected(in_features: usize, out_features: usize, activation: Activation, rng: &mut impl Rng) -> Layer {
        Layer {
            kind: LayerKind::FullyConnected {
                in_features,
                out_features,
            },
            weights: uniform_init(rng, &[out_features, in_features], in_features, activation),
            bias: Some(Tensor::zeros(&[out_features])),
            activation,
        }
    }

    pub fn conv2d(geometry: ConvGeometry, activation: Activation, rng: &mut impl Rng) -> Layer {
        let (m, k) = geometry.kernel;
        let fan_in = geometry.in_channels * m * k;
        Layer {
            kind: LayerKind::Conv2d(geometry),
            weights: uniform_init(
                rng,
                &[geometry.out_channels, geometry.in_channels, m, k],
                fan_in,
                activation,
            ),
            bias: Some(Tensor::zeros(&[geometry.out_channels])),
            activation,
        }
    }

    pub fn max_pool(geometry: PoolGeometry) -> Layer {
        Layer {
            kind: LayerKind::MaxPool(geometry),
            weights: Tensor::empty(),
            bias: None,
            activation: Activation::Identity,
        }
    }

    pub fn avg_pool(geometry: PoolGeometry) -> Layer {
        Layer {
            kind: LayerKind::AvgPool(geometry),
            weights: Tensor::empty(),
            bias: None,
            activation: Activation::Identity,
        }
    }

    /// Builds a layer from explicit parameters, validating their shapes.
    pub fn with_params(kind: LayerKind, weights: Tensor, bias: Option<Tensor>, activation: Activation) -> Result<Layer> {
        let expected: Vec<usize> = match kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => vec![out_features, in_features],
            LayerKind::Conv2d(g) => vec![g.out_channels, g.in_channels, g.kernel.0, g.kernel.1],
            LayerKind::MaxPool(_) | LayerKind::AvgPool(_) => vec![0],
        };
        if weights.shape() != expected.as_slice() {
            return Err(Error::Shape(format!(
                "weights {:?} for {kind:?}, expected {expected:?}",
                weights.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != expected[0] {
                return Err(Error::Shape(format!("bias of length {} for {kind:?}", b.len())));
            }
        }
        Ok(Layer {
            kind,
            weights,
            bias,
            activation,
        })
    }

    pub fn has_weights(&self) -> bool {
        matches!(self.kind, LayerKind::FullyConnected { .. } | LayerKind::Conv2d(_))
    }

    /// Sliding-window geometry for a given input shape (conv and pooling only).
    pub fn window(&self, input_shape: &[usize]) -> Result<Window> {
        if input_shape.len() != 4 {
            return Err(Error::Shape(format!("expected b×C×H×W input, got {input_shape:?}")));
        }
        let (channels, height, width) = (input_shape[1], input_shape[2], input_shape[3]);
        match self.kind {
            LayerKind::Conv2d(g) => {
                if channels != g.in_channels {
                    return Err(Error::Shape(format!(
                        "conv expects {} channels, got {channels}",
                        g.in_channels
                    )));
                }
                Ok(Window {
                    channels,
                    height,
                    width,
                    kernel: g.kernel,
                    stride: g.stride,
                    padding: g.padding,
                })
            }
            LayerKind::MaxPool(p) | LayerKind::AvgPool(p) => Ok(Window {
                channels: 1,
                height,
                width,
                kernel: (p.size, p.size),
                stride: p.stride,
                padding: p.padding,
            }),
            LayerKind::FullyConnected { .. } => Err(Error::Shape("dense layers have no window".into())),
        }
    }

    /// Output shape of the linear part for a given input shape.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let batch = *input_shape.first().ok_or_else(|| Error::Shape("empty input shape".into()))?;
        match self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                let features: usize = input_shape[1..].iter().product();
                if features != in_features {
                    return Err(Error::Shape(format!(
                        "dense layer expects {in_features} features, got {features}"
                    )));
                }
                Ok(vec![batch, out_features])
            }
            LayerKind::Conv2d(g) => {
                let (oh, ow) = self.window(input_shape)?.output_hw()?;
                Ok(vec![batch, g.out_channels, oh, ow])
            }
            LayerKind::MaxPool(_) | LayerKind::AvgPool(_) => {
                let (oh, ow) = self.window(input_shape)?.output_hw()?;
                Ok(vec![batch, input_shape[1], oh, ow])
            }
        }
    }

    pub fn forward(&self, index: usize, x: &Tensor) -> Result<LayerCache> {
        let shape_err = |e: Error| Error::LayerShape {
            layer: index,
            detail: e.to_string(),
        };
        let out_shape = self.output_shape(x.shape()).map_err(shape_err)?;
        let mut cols = None;
        let mut argmax = None;
        let preact = match self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                let batch = x.rows();
                let mut h = Tensor::zeros(&out_shape);
                gemm(
                    batch,
                    in_features,
                    out_features,
                    MatRef::new(x.data(), in_features, false),
                    MatRef::new(self.weights.data(), in_features, true),
                    h.data_mut(),
                    0.0,
                );
                if let Some(b) = &self.bias {
                    for s in 0..batch {
                        for (v, &bv) in h.row_mut(s).iter_mut().zip(b.data()) {
                            *v += bv;
                        }
                    }
                }
                h
            }
            LayerKind::Conv2d(g) => {
                let win = self.window(x.shape()).map_err(shape_err)?;
                let patches = im2col_with(x, &win).map_err(shape_err)?;
                let mut h = self.conv_apply(&patches, x.rows(), &win, &out_shape);
                if let Some(b) = &self.bias {
                    let positions = out_shape[2] * out_shape[3];
                    for (i, v) in h.data_mut().iter_mut().enumerate() {
                        *v += b.data()[(i / positions) % g.out_channels];
                    }
                }
                cols = Some(patches);
                h
            }
            LayerKind::MaxPool(_) => {
                let win = self.window(x.shape()).map_err(shape_err)?;
                let (h, idx) = max_pool(x, &win, &out_shape);
                argmax = Some(idx);
                h
            }
            LayerKind::AvgPool(_) => {
                let win = self.window(x.shape()).map_err(shape_err)?;
                pool_sum(x, &win, &out_shape, 1.0 / (win.kernel.0 * win.kernel.1) as f64)
            }
        };
        let act = self.activation;
        let output = preact.map(|v| act.apply(v));
        let slope = preact.map(|v| act.d1(v));
        if !output.all_finite() {
            return Err(Error::NonFinite(format!("layer {index} output")));
        }
        Ok(LayerCache {
            input: x.clone(),
            preact,
            output,
            slope,
            cols,
            argmax,
            grad_wrt_output: None,
            grad_wrt_preact: None,
            offset: None,
            preact_hessian_diag: None,
        })
    }

    /// Convolution of prepared patches with the kernel, laid out as b×C_out×H_out×W_out.
    fn conv_apply(&self, patches: &Tensor, batch: usize, win: &Window, out_shape: &[usize]) -> Tensor {
        let cout = out_shape[1];
        let positions = out_shape[2] * out_shape[3];
        let width = win.patch_len();
        let mut flat = vec![0.0; batch * positions * cout];
        gemm(
            batch * positions,
            width,
            cout,
            MatRef::new(patches.data(), width, false),
            MatRef::new(self.weights.data(), width, true),
            &mut flat,
            0.0,
        );
        let mut h = Tensor::zeros(out_shape);
        let hd = h.data_mut();
        for b in 0..batch {
            for p in 0..positions {
                for c in 0..cout {
                    hd[(b * cout + c) * positions + p] = flat[(b * positions + p) * cout + c];
                }
            }
        }
        h
    }

    /// Applies the linear part (no bias, no activation) to a tangent `x`
    /// shaped like the cached input. Max pooling reuses the cached selection.
    pub fn linear(&self, cache: &LayerCache, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        match self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                let mut h = Tensor::zeros(&out_shape);
                gemm(
                    x.rows(),
                    in_features,
                    out_features,
                    MatRef::new(x.data(), in_features, false),
                    MatRef::new(self.weights.data(), in_features, true),
                    h.data_mut(),
                    0.0,
                );
                Ok(h)
            }
            LayerKind::Conv2d(_) => {
                let win = self.window(x.shape())?;
                let patches = im2col_with(x, &win)?;
                Ok(self.conv_apply(&patches, x.rows(), &win, &out_shape))
            }
            LayerKind::MaxPool(_) => {
                let idx = cache
                    .argmax
                    .as_ref()
                    .ok_or_else(|| Error::MissingCache("max-pool selection".into()))?;
                let data = idx.iter().map(|&i| x.data()[i]).collect();
                Tensor::from_vec(&out_shape, data)
            }
            LayerKind::AvgPool(_) => {
                let win = self.window(x.shape())?;
                Ok(pool_sum(x, &win, &out_shape, 1.0 / (win.kernel.0 * win.kernel.1) as f64))
            }
        }
    }

    /// Second-order forward jet: pushes first and second input tangents
    /// through the layer at the cached operating point.
    pub fn jet(&self, cache: &LayerCache, first: &Tensor, second: &Tensor) -> Result<(Tensor, Tensor)> {
        let lin1 = self.linear(cache, first)?;
        let lin2 = self.linear(cache, second)?;
        let act = self.activation;
        let out1 = lin1.zip_map(&cache.slope, |l, b| l * b);
        let mut out2 = lin2.zip_map(&cache.slope, |l, b| l * b);
        for ((o, &l), &h) in out2.data_mut().iter_mut().zip(lin1.data()).zip(cache.preact.data()) {
            *o += act.d2(h) * l * l;
        }
        Ok((out1, out2))
    }

    /// Reverse pass for one layer; records gradient state in `cache`.
    pub fn backward(&self, index: usize, cache: &mut LayerCache, grad_out: &Tensor) -> Result<(LayerGrad, Tensor)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::MissingCache(format!(
                "layer {index}: gradient {:?} does not match cached output {:?}",
                grad_out.shape(),
                cache.output.shape()
            )));
        }
        let act = self.activation;
        let batch = cache.input.rows();
        let gh = grad_out.zip_map(&cache.slope, |g, b| g * b);
        let per_sample = batch as f64;
        let offset = grad_out.zip_map(&cache.preact, |g, h| act.d2(h) * g * per_sample);
        let (grad, dx) = match self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                let mut dw = Tensor::zeros(self.weights.shape());
                gemm(
                    out_features,
                    batch,
                    in_features,
                    MatRef::new(gh.data(), out_features, true),
                    MatRef::new(cache.input.data(), in_features, false),
                    dw.data_mut(),
                    0.0,
                );
                let db = self.bias.as_ref().map(|_| {
                    let mut db = Tensor::zeros(&[out_features]);
                    for s in 0..batch {
                        for (d, &g) in db.data_mut().iter_mut().zip(gh.row(s)) {
                            *d += g;
                        }
                    }
                    db
                });
                let mut dx = Tensor::zeros(cache.input.shape());
                gemm(
                    batch,
                    out_features,
                    in_features,
                    MatRef::new(gh.data(), out_features, false),
                    MatRef::new(self.weights.data(), in_features, false),
                    dx.data_mut(),
                    0.0,
                );
                (LayerGrad { weights: dw, bias: db }, dx)
            }
            LayerKind::Conv2d(g) => {
                let patches = cache
                    .cols
                    .as_ref()
                    .ok_or_else(|| Error::MissingCache(format!("layer {index}: im2col patches")))?;
                let win = self.window(cache.input.shape())?;
                let cout = g.out_channels;
                let positions = gh.row_len() / cout;
                let width = win.patch_len();
                let mut flat = vec![0.0; batch * positions * cout];
                for b in 0..batch {
                    for c in 0..cout {
                        for p in 0..positions {
                            flat[(b * positions + p) * cout + c] = gh.data()[(b * cout + c) * positions + p];
                        }
                    }
                }
                let mut dw = Tensor::zeros(self.weights.shape());
                gemm(
                    cout,
                    batch * positions,
                    width,
                    MatRef::new(&flat, cout, true),
                    MatRef::new(patches.data(), width, false),
                    dw.data_mut(),
                    0.0,
                );
                let db = self.bias.as_ref().map(|_| {
                    let mut db = vec![0.0; cout];
                    for (i, &v) in gh.data().iter().enumerate() {
                        db[(i / positions) % cout] += v;
                    }
                    Tensor::from_vec(&[cout], db).expect("bias shape")
                });
                let mut dcols = Tensor::zeros(&[batch * positions, width]);
                gemm(
                    batch * positions,
                    cout,
                    width,
                    MatRef::new(&flat, cout, false),
                    MatRef::new(self.weights.data(), width, false),
                    dcols.data_mut(),
                    0.0,
                );
                let dx = col2im(&dcols, batch, &win)?;
                (LayerGrad { weights: dw, bias: db }, dx)
            }
            LayerKind::MaxPool(_) => {
                let idx = cache
                    .argmax
                    .as_ref()
                    .ok_or_else(|| Error::MissingCache(format!("layer {index}: max-pool selection")))?;
                let mut dx = Tensor::zeros(cache.input.shape());
                for (&i, &g) in idx.iter().zip(gh.data()) {
                    dx.data_mut()[i] += g;
                }
                (
                    LayerGrad {
                        weights: Tensor::empty(),
                        bias: None,
                    },
                    dx,
                )
            }
            LayerKind::AvgPool(_) => {
                let win = self.window(cache.input.shape())?;
                let dx = pool_scatter(&gh, cache.input.shape(), &win, 1.0 / (win.kernel.0 * win.kernel.1) as f64);
                (
                    LayerGrad {
                        weights: Tensor::empty(),
                        bias: None,
                    },
                    dx,
                )
            }
        };
        cache.grad_wrt_output = Some(grad_out.clone());
        cache.grad_wrt_preact = Some(gh);
        cache.offset = Some(offset);
        Ok((grad, dx))
    }
}

/// Iterates the in-bounds input offsets (within one channel plane) of a pooling window.
pub(crate) fn pool_window(win: &Window, oy: usize, ox: usize) -> impl Iterator<Item = usize> + '_ {
    let (m, k) = win.kernel;
    (0..m).flat_map(move |ky| {
        (0..k).filter_map(move |kx| {
            let y = (oy * win.stride + ky) as isize - win.padding as isize;
            let x = (ox * win.stride + kx) as isize - win.padding as isize;
            (y >= 0 && x >= 0 && (y as usize) < win.height && (x as usize) < win.width)
                .then(|| y as usize * win.width + x as usize)
        })
    })
}

fn max_pool(x: &Tensor, win: &Window, out_shape: &[usize]) -> (Tensor, Vec<usize>) {
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let plane = win.height * win.width;
    let planes = out_shape[0] * out_shape[1];
    let mut out = vec![0.0; planes * oh * ow];
    let mut idx = vec![0; out.len()];
    let src = x.data();
    for pl in 0..planes {
        let base = pl * plane;
        let input = &src[base..base + plane];
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (pl * oh + oy) * ow + ox;
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for i in pool_window(win, oy, ox) {
                    if input[i] > best {
                        best = input[i];
                        arg = i;
                    }
                }
                out[o] = best;
                idx[o] = base + arg;
            }
        }
    }
    (Tensor::from_vec(out_shape, out).expect("pool output shape"), idx)
}

fn pool_sum(x: &Tensor, win: &Window, out_shape: &[usize], scale: f64) -> Tensor {
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let plane = win.height * win.width;
    let planes = out_shape[0] * out_shape[1];
    let mut out = Tensor::zeros(out_shape);
    for pl in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let total: f64 = pool_window(win, oy, ox).map(|i| x.data()[pl * plane + i]).sum();
                out.data_mut()[(pl * oh + oy) * ow + ox] = total * scale;
            }
        }
    }
    out
}

fn pool_scatter(g: &Tensor, input_shape: &[usize], win: &Window, scale: f64) -> Tensor {
    let (oh, ow) = (g.shape()[2], g.shape()[3]);
    let plane = win.height * win.width;
    let planes = g.shape()[0] * g.shape()[1];
    let mut dx = Tensor::zeros(input_shape);
    for pl in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g.data()[(pl * oh + oy) * ow + ox] * scale;
                for i in pool_window(win, oy, ox) {
                    dx.data_mut()[pl * plane + i] += v;
                }
            }
        }
    }
    dx
}
