use rand::Rng;
use rand_distr::{Distribution, Normal};
use syn2real_tensor::{Scalar, Tensor};

/// Gaussian weights, the usual `N(0, 0.02)` for translation GANs.
pub fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches count")
}

/// He-normal for ReLU stacks without normalization.
pub fn kaiming<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

pub const GAN_INIT_STD: f64 = 0.02;
