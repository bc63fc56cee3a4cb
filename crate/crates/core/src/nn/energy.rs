use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    /// Half squared error per sample, averaged over the batch.
    Mse,
    /// Softmax followed by negative log-likelihood, averaged over the batch.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Tensor),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(t) => t.rows(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Values(t) => Targets::Values(t.select_rows(indices)),
            Targets::Labels(l) => Targets::Labels(indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns the batch-mean energy and its gradient with respect to `output`.
pub fn energy(output: &Tensor, target: &Targets, kind: EnergyKind) -> Result<(f64, Tensor)> {
    let batch = output.rows();
    if batch == 0 {
        return Err(Error::Shape("energy of an empty batch".into()));
    }
    let inv_b = 1.0 / batch as f64;
    match (kind, target) {
        (EnergyKind::Mse, Targets::Values(t)) => {
            if t.len() != output.len() || t.rows() != batch {
                return Err(Error::Shape(format!(
                    "output {:?} vs target {:?}",
                    output.shape(),
                    t.shape()
                )));
            }
            let mut total = 0.0;
            let mut grad = Tensor::zeros(output.shape());
            for ((g, &o), &y) in grad.data_mut().iter_mut().zip(output.data()).zip(t.data()) {
                let r = o - y;
                total += 0.5 * r * r;
                *g = r * inv_b;
            }
            Ok((total * inv_b, grad))
        }
        (EnergyKind::SoftmaxCrossEntropy, Targets::Labels(labels)) => {
            if labels.len() != batch {
                return Err(Error::Shape(format!(
                    "{} labels for batch of {batch}",
                    labels.len()
                )));
            }
            let classes = output.row_len();
            let mut total = 0.0;
            let mut grad = Tensor::zeros(output.shape());
            for (s, &label) in labels.iter().enumerate() {
                if label >= classes {
                    return Err(Error::LabelOutOfRange {
                        sample: s,
                        label,
                        classes,
                    });
                }
                let p = softmax_row(output.row(s));
                total -= p[label].max(f64::MIN_POSITIVE).ln();
                for (c, (g, &pc)) in grad.row_mut(s).iter_mut().zip(&p).enumerate() {
                    let onehot = if c == label { 1.0 } else { 0.0 };
                    *g = (pc - onehot) * inv_b;
                }
            }
            Ok((total * inv_b, grad))
        }
        (EnergyKind::Mse, Targets::Labels(_)) => {
            Err(Error::Shape("mean squared error needs value targets".into()))
        }
        (EnergyKind::SoftmaxCrossEntropy, Targets::Values(_)) => {
            Err(Error::Shape("cross-entropy needs label targets".into()))
        }
    }
}

/// Fraction of rows whose arg-max differs from the label.
pub fn classification_error(output: &Tensor, labels: &[usize]) -> f64 {
    let wrong = labels
        .iter()
        .enumerate()
        .filter(|&(s, &label)| {
            let row = output.row(s);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
            best != label
        })
        .count();
    wrong as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_hand_values() {
        let out = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let t = Targets::Values(Tensor::from_vec(&[1, 1], vec![0.0]).unwrap());
        let (e, g) = energy(&out, &t, EnergyKind::Mse).unwrap();
        assert_eq!(e, 2.0);
        assert_eq!(g.data(), &[2.0]);
    }

    #[test]
    fn perfect_fit_is_zero() {
        let out = Tensor::from_vec(&[2, 2], vec![1.0, -1.0, 0.5, 3.0]).unwrap();
        let (e, g) = energy(&out, &Targets::Values(out.clone()), EnergyKind::Mse).unwrap();
        assert_eq!(e, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_logits_cost_ln3() {
        let out = Tensor::zeros(&[1, 3]);
        let (e, _) = energy(&out, &Targets::Labels(vec![1]), EnergyKind::SoftmaxCrossEntropy).unwrap();
        assert!((e - 3f64.ln()).abs() < 1e-15);
        assert!((e - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn label_out_of_range() {
        let out = Tensor::zeros(&[1, 3]);
        let err = energy(&out, &Targets::Labels(vec![3]), EnergyKind::SoftmaxCrossEntropy);
        assert!(matches!(err, Err(Error::LabelOutOfRange { label: 3, .. })));
    }
}
