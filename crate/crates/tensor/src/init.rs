//! Seeded parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

pub fn normal<S: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<S> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::from_f64(z * std)
        })
        .collect()
}

/// Uniform in `[-bound, bound]` with `bound = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<S: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| S::from_f64(rng.random_range(-bound..=bound)))
        .collect()
}
