use ndarray::IxDyn;
use rand::Rng;

use crate::tensor::Tensor;

/// Glorot/Xavier uniform: `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, limit)
}

/// `U(-limit, limit)` in every entry.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor {
    Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(-limit..=limit))
}

pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(IxDyn(shape))
}
