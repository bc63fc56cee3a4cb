#![allow(dead_code)]

pub mod cccp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsenas::graph::{Edge, OpKind, SuperGraph};
use sparsenas::nn::{Activation, ConvGeometry, Layer, LayerKind, PoolGeometry, Targets};
use sparsenas::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Relative error with a floor so that near-zero entries compare absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y, floor)).fold(0.0, f64::max)
}

/// Dense net with random widths in 1..=max_width and random smooth activations.
pub fn random_fc_net(rng: &mut impl Rng, depth: usize, max_width: usize) -> (Vec<Layer>, usize) {
    let input = rng.random_range(1..=max_width);
    let mut widths = vec![input];
    for _ in 0..depth {
        widths.push(rng.random_range(1..=max_width));
    }
    let layers = widths
        .windows(2)
        .map(|w| {
            let act = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Softplus };
            let mut layer = Layer::fully_connected(w[0], w[1], act, rng);
            layer.bias = Some(random_tensor(rng, &[w[1]], 0.3));
            layer
        })
        .collect();
    (layers, input)
}

pub fn mlp(widths: &[usize], act: Activation, rng: &mut impl Rng) -> Vec<Layer> {
    widths
        .windows(2)
        .map(|w| {
            let mut layer = Layer::fully_connected(w[0], w[1], act, rng);
            layer.bias = Some(random_tensor(rng, &[w[1]], 0.3));
            layer
        })
        .collect()
}

/// Small conv stack: conv → (optional pool) → dense readout.
pub fn random_conv_net(rng: &mut impl Rng, variant: usize) -> (Vec<Layer>, Vec<usize>) {
    let cin = 1 + variant % 2;
    let size = 4 + variant % 2;
    let kernel = if variant % 3 == 0 { (2, 2) } else { (3, 3) };
    let padding = variant % 2;
    let cout = 2;
    let act = if variant % 2 == 0 { Activation::Tanh } else { Activation::Softplus };
    let mut conv = Layer::conv2d(
        ConvGeometry {
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride: 1,
            padding,
        },
        act,
        rng,
    );
    conv.bias = Some(random_tensor(rng, &[cout], 0.2));
    let mut layers = vec![conv];
    let oh = size + 2 * padding - kernel.0 + 1;
    let ow = size + 2 * padding - kernel.1 + 1;
    let mut features = cout * oh * ow;
    if variant % 4 == 1 {
        layers.push(Layer::avg_pool(PoolGeometry { size: 2, stride: 1, padding: 0 }));
        features = cout * (oh - 1) * (ow - 1);
    }
    layers.push(Layer::fully_connected(features, 2, Activation::Tanh, rng));
    (layers, vec![cin, size, size])
}

pub fn value_targets(rng: &mut impl Rng, batch: usize, width: usize) -> Targets {
    Targets::Values(random_tensor(rng, &[batch, width], 1.0))
}

/// Random DAG with identity edges over `nodes` nodes, input 0 and output last.
pub fn random_dag(rng: &mut impl Rng, nodes: usize, density: f64) -> SuperGraph {
    let mut g = SuperGraph::new(vec![vec![1]; nodes], 0, nodes - 1);
    for to in 1..nodes {
        let from = rng.random_range(0..to);
        g.add_edge(Edge::new(from, to, OpKind::Identity, None)).unwrap();
        for other in 0..to {
            if other != from && rng.random_bool(density) {
                g.add_edge(Edge::new(other, to, OpKind::Identity, None)).unwrap();
            }
        }
    }
    g
}

/// Indices of edges whose source is reachable from the input over `alive`.
pub fn reachability_filter(graph: &SuperGraph, alive: &[bool]) -> Vec<bool> {
    let mut reach = vec![false; graph.num_nodes];
    reach[graph.input] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for (i, e) in graph.edges.iter().enumerate() {
            if alive[i] && reach[e.from] && !reach[e.to] {
                reach[e.to] = true;
                changed = true;
            }
        }
    }
    graph
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| alive[i] && reach[e.from])
        .collect()
}

/// Convolution by explicit loops over every output, channel and tap.
pub fn direct_conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for n in 0..b {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let y = (oy * stride + dy) as isize - pad as isize;
                                let xx = (ox * stride + dx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((n * c + ci) * h + y as usize) * w + xx as usize]
                                    * k.data()[((o * c + ci) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn conv_layer(k: Tensor, stride: usize, padding: usize) -> Layer {
    let s = k.shape().to_vec();
    Layer::with_params(
        LayerKind::Conv2d(ConvGeometry {
            in_channels: s[1],
            out_channels: s[0],
            kernel: (s[2], s[3]),
            stride,
            padding,
        }),
        k,
        None,
        Activation::Identity,
    )
    .unwrap()
}
