//! Seeded parameter initializers. Values are drawn in f64 and cast, so the
//! same seed yields the same model in either precision.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

pub type ParamRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> ParamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<T>> {
    let v = uniform_vec(rng, numel(shape), lo, hi);
    Tensor::param(v.into_iter().map(T::of).collect(), shape)
}

pub fn normal<T: Scalar>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Result<Tensor<T>> {
    let dist = Normal::new(0.0, std).expect("finite positive std");
    let v: Vec<T> = (0..numel(shape)).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::param(v, shape)
}

/// Glorot/Xavier uniform for a weight with the given fans.
pub fn xavier<T: Scalar>(
    rng: &mut impl Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, -limit, limit)
}

pub fn zeros_param<T: Scalar>(shape: &[usize]) -> Result<Tensor<T>> {
    Tensor::param(vec![T::zero(); numel(shape)], shape)
}

pub fn ones_param<T: Scalar>(shape: &[usize]) -> Result<Tensor<T>> {
    Tensor::param(vec![T::one(); numel(shape)], shape)
}
