//! Random tensor constructors.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{numel_of, Scalar, Tensor};

pub fn normal_vec(n: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect()
}

/// Normal samples rejected outside two standard deviations.
pub fn trunc_normal_vec(n: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect()
}

pub fn randn<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_f64(&normal_vec(numel_of(shape), std, rng), shape).expect("shape matches")
}

pub fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<T> {
    let v: Vec<f64> = (0..numel_of(shape)).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(&v, shape).expect("shape matches")
}

pub fn trunc_normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_f64(&trunc_normal_vec(numel_of(shape), std, rng), shape).expect("shape matches")
}
