//! Shared fixtures for the benchmarks.

use promptts_core::numerics::{SeededRng, Tensor};

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(shape, |_| rng.normal() as f32)
}
