//! LeNet presets for structured compression.

use rand::Rng;

use super::compress::CompressionPlan;
use crate::bayes::{GroupPattern, Network, Strength};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvGeometry, Layer, PoolGeometry};

/// Penalty strengths used when the configuration gives none.
fn default_lambdas(network: Network) -> Vec<Strength> {
    match network {
        Network::Lenet300100 => vec![Strength::Uniform(5e-4); 3],
        Network::Lenet5 => vec![Strength::Uniform(5e-4); 4],
    }
}

pub fn build_network(network: Network, rng: &mut impl Rng) -> Vec<Layer> {
    match network {
        Network::Lenet300100 => vec![
            Layer::fully_connected(784, 300, Activation::Relu, rng),
            Layer::fully_connected(300, 100, Activation::Relu, rng),
            Layer::fully_connected(100, 10, Activation::Identity, rng),
        ],
        Network::Lenet5 => {
            let conv = |cin, cout| ConvGeometry {
                in_channels: cin,
                out_channels: cout,
                kernel: (5, 5),
                stride: 1,
                padding: 0,
            };
            let pool = PoolGeometry {
                size: 2,
                stride: 2,
                padding: 0,
            };
            vec![
                Layer::conv2d(conv(1, 20), Activation::Relu, rng),
                Layer::max_pool(pool),
                Layer::conv2d(conv(20, 50), Activation::Relu, rng),
                Layer::max_pool(pool),
                Layer::fully_connected(800, 500, Activation::Relu, rng),
                Layer::fully_connected(500, 10, Activation::Identity, rng),
            ]
        }
    }
}

/// Patterns per weighted layer: dense layers get input-column and
/// output-row groups (the classifier only columns), conv layers get
/// shape-wise and filter-wise groups.
pub fn default_plans(
    network: Network,
    lambdas: Option<&[Strength]>,
    patterns: Option<&[Vec<GroupPattern>]>,
) -> Result<Vec<CompressionPlan>> {
    let (layers, preset): (Vec<usize>, Vec<Vec<GroupPattern>>) = match network {
        Network::Lenet300100 => (
            vec![0, 1, 2],
            vec![
                vec![GroupPattern::ColumnWise, GroupPattern::RowWise],
                vec![GroupPattern::ColumnWise, GroupPattern::RowWise],
                vec![GroupPattern::ColumnWise],
            ],
        ),
        Network::Lenet5 => (
            vec![0, 2, 4, 5],
            vec![
                vec![GroupPattern::ShapeWise, GroupPattern::FilterWise],
                vec![GroupPattern::ShapeWise, GroupPattern::FilterWise],
                vec![GroupPattern::ColumnWise, GroupPattern::RowWise],
                vec![GroupPattern::ColumnWise],
            ],
        ),
    };
    let lambdas = lambdas.map_or_else(|| default_lambdas(network), <[Strength]>::to_vec);
    let patterns = patterns.map_or(preset, <[Vec<GroupPattern>]>::to_vec);
    for (field, len) in [("compress.layer_lambdas", lambdas.len()), ("compress.patterns", patterns.len())] {
        if len != layers.len() {
            return Err(Error::Config {
                field: field.into(),
                reason: format!("{network:?} has {} weighted layers, got {len} entries", layers.len()),
            });
        }
    }
    layers
        .into_iter()
        .zip(patterns)
        .zip(lambdas)
        .map(|((layer, patterns), strength)| {
            let lambdas = match strength {
                Strength::Uniform(v) => vec![v; patterns.len()],
                Strength::PerPattern(v) if v.len() == patterns.len() => v,
                Strength::PerPattern(v) => {
                    return Err(Error::Config {
                        field: "compress.layer_lambdas".into(),
                        reason: format!("layer {layer}: {} strengths for {} patterns", v.len(), patterns.len()),
                    })
                }
            };
            Ok(CompressionPlan { layer, patterns, lambdas })
        })
        .collect()
}

/// Output units (rows or filters) with any non-zero weight.
fn live_outputs(layer: &Layer) -> Vec<bool> {
    let rows = layer.weights.shape()[0];
    let per = layer.weights.len() / rows.max(1);
    (0..rows)
        .map(|r| layer.weights.data()[r * per..(r + 1) * per].iter().any(|&v| v != 0.0))
        .collect()
}

/// Input units (dense columns or conv input channels) with any non-zero weight.
fn live_inputs(layer: &Layer) -> Vec<bool> {
    let shape = layer.weights.shape();
    let (rows, inputs) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let w = layer.weights.data();
    (0..inputs)
        .map(|c| (0..rows).any(|r| (0..inner).any(|k| w[(r * inputs + c) * inner + k] != 0.0)))
        .collect()
}

fn both(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| **x && **y).count()
}

/// Surviving widths in the usual notation: `in-h1-h2` for the MLP and
/// `conv1-conv2-fc1_in-fc1_out` for the convnet.
pub fn surviving_widths(network: Network, layers: &[Layer]) -> Result<Vec<usize>> {
    let weighted = |i: usize| -> Result<&Layer> {
        layers
            .get(i)
            .filter(|l| l.has_weights())
            .ok_or_else(|| Error::Shape(format!("{network:?} expects weights at layer {i}")))
    };
    Ok(match network {
        Network::Lenet300100 => {
            let (l0, l1, l2) = (weighted(0)?, weighted(1)?, weighted(2)?);
            vec![
                live_inputs(l0).iter().filter(|&&v| v).count(),
                both(&live_outputs(l0), &live_inputs(l1)),
                both(&live_outputs(l1), &live_inputs(l2)),
            ]
        }
        Network::Lenet5 => {
            let (c1, c2, f1, f2) = (weighted(0)?, weighted(2)?, weighted(4)?, weighted(5)?);
            let f1_cols = live_inputs(f1);
            let filters = live_outputs(c2).len();
            let per_channel = f1_cols.len() / filters.max(1);
            let c2_feeds: Vec<bool> = (0..filters)
                .map(|f| f1_cols[f * per_channel..(f + 1) * per_channel].iter().any(|&v| v))
                .collect();
            vec![
                both(&live_outputs(c1), &live_inputs(c2)),
                both(&live_outputs(c2), &c2_feeds),
                f1_cols.iter().filter(|&&v| v).count(),
                both(&live_outputs(f1), &live_inputs(f2)),
            ]
        }
    })
}

/// `(surviving, total)` parameter counts: non-zero weights plus the biases of
/// live output units, against all weights and biases.
pub fn param_counts(layers: &[Layer]) -> (usize, usize) {
    let mut surviving = 0;
    let mut total = 0;
    for layer in layers.iter().filter(|l| l.has_weights()) {
        total += layer.weights.len() + layer.bias.as_ref().map_or(0, |b| b.len());
        surviving += layer.weights.data().iter().filter(|&&v| v != 0.0).count();
        if layer.bias.is_some() {
            surviving += live_outputs(layer).iter().filter(|&&v| v).count();
        }
    }
    (surviving, total)
}

