//! Seedable parameter initializers.

use ddt_tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Xavier/Glorot uniform for a `fan_in × fan_out` matrix.
pub fn xavier_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], bound, rng)
}

/// Zero-mean Gaussian entries with the given standard deviation.
pub fn gaussian<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape, data).expect("shape is non-empty")
}
