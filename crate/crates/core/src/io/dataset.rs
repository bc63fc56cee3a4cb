//! In-memory datasets and the MNIST loader.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::idx::{read_images, read_labels};
use crate::error::{Error, Result};
use crate::nn::Targets;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Affine input normalization `(x − mean)/std`, fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Leading dimension indexes samples.
    pub inputs: Tensor,
    pub targets: Targets,
    pub split: Split,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets, split: Split) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        Ok(Dataset {
            inputs,
            targets,
            split,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Targets) {
        (self.inputs.select_rows(indices), self.targets.select(indices))
    }

    /// The first `n` samples (all when `n` is 0 or too large).
    pub fn head(&self, n: usize) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let idx: Vec<usize> = (0..n).collect();
        let (inputs, targets) = self.batch(&idx);
        Dataset {
            inputs,
            targets,
            split: self.split,
            normalization: self.normalization,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn load_split(images: &Path, labels: &Path, split: Split) -> Result<(Vec<f64>, usize, usize, usize, Vec<usize>)> {
    let (count, rows, cols, pixels) = read_images(images)?;
    let labels_vec = read_labels(labels, 10)?;
    if labels_vec.len() != count {
        return Err(Error::Parse {
            path: labels.to_path_buf(),
            reason: format!("{} labels for {count} images in {:?} split", labels_vec.len(), split),
        });
    }
    Ok((pixels.iter().map(|&p| p as f64 / 255.0).collect(), count, rows, cols, labels_vec))
}

/// Loads the four standard MNIST files from `dir`. Pixels are scaled to
/// `[0, 1]` and standardized with the training mean and standard deviation.
pub fn load_mnist_idx(dir: &Path) -> Result<Mnist> {
    let p = |name: &str| dir.join(name);
    let (mut train_x, n_train, rows, cols, train_y) =
        load_split(&p(MNIST_FILES[0]), &p(MNIST_FILES[1]), Split::Train)?;
    let (mut test_x, n_test, test_rows, test_cols, test_y) =
        load_split(&p(MNIST_FILES[2]), &p(MNIST_FILES[3]), Split::Test)?;
    if (rows, cols) != (test_rows, test_cols) {
        return Err(Error::Parse {
            path: p(MNIST_FILES[2]),
            reason: format!("test images are {test_rows}×{test_cols}, train images {rows}×{cols}"),
        });
    }
    let n = train_x.len() as f64;
    let mean = train_x.iter().sum::<f64>() / n;
    let std = (train_x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    for v in train_x.iter_mut().chain(test_x.iter_mut()) {
        *v = (*v - mean) / std;
    }
    let norm = Normalization { mean, std };
    let mut train = Dataset::new(
        Tensor::from_vec(&[n_train, 1, rows, cols], train_x)?,
        Targets::Labels(train_y),
        Split::Train,
    )?;
    let mut test = Dataset::new(
        Tensor::from_vec(&[n_test, 1, rows, cols], test_x)?,
        Targets::Labels(test_y),
        Split::Test,
    )?;
    train.normalization = Some(norm);
    test.normalization = Some(norm);
    Ok(Mnist { train, test })
}
