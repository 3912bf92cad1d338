use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// Uniform Glorot initialization.
pub(crate) fn xavier(shape: impl Into<Vec<usize>>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}

/// Normal He initialization for layers followed by a rectifier-like activation.
pub(crate) fn he(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    Tensor::from_fn(shape, |_| n.sample(rng))
}

pub(crate) fn normal(shape: impl Into<Vec<usize>>, std: f64, rng: &mut impl Rng) -> Tensor {
    let n = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape, |_| n.sample(rng))
}

pub(crate) fn zeros_vec(n: usize) -> Tensor {
    Tensor::zeros([n])
}
