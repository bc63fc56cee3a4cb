//! Sparse Bayesian architecture search over operation DAGs and structured
//! compression of dense and convolutional networks.

pub mod bayes;
pub mod curvature;
pub mod error;
pub mod graph;
pub mod io;
pub mod nn;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
