#![allow(dead_code)]

use equidiag::group::{sample_uniform, GroupElement, GroupSpec};
use equidiag::models::{init_parameters, ModelHandle, ModelKind, ModelSpec};
use equidiag::objective::Sample;
use equidiag::rng::{self, Stream};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> Stream {
    rng::seeded(seed)
}

pub fn gaussian(rng: &mut Stream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
}

pub fn haar(rng: &mut Stream) -> GroupElement {
    sample_uniform(&GroupSpec::So3, rng).unwrap()
}

pub fn dataset(rng: &mut Stream, n: usize, atoms: usize) -> Vec<Sample> {
    (0..n).map(|_| Sample { x: gaussian(rng, 3 * atoms, 1.0), y: gaussian(rng, 3 * atoms, 0.5) }).collect()
}

pub fn model(kind: ModelKind, atoms: usize, hidden: &[usize], seed: u64) -> ModelHandle {
    init_parameters(&ModelSpec::new(kind, atoms, hidden.to_vec()), seed).unwrap()
}

/// Coordinate MLP whose output is the constant `c` (atoms = c.len() / 3).
pub fn constant_model(c: &[f64]) -> ModelHandle {
    let mut m = model(ModelKind::CoordMlp, c.len() / 3, &[], 0);
    m.params.get_mut("out.weight").unwrap().iter_mut().for_each(|v| *v = 0.0);
    m.params.get_mut("out.bias").unwrap().copy_from_slice(c);
    m
}

/// Rotates each 3-block of `v` by the plain matrix `m`.
pub fn rotate_blocks(m: &[[f64; 3]; 3], v: &[f64]) -> Vec<f64> {
    v.chunks(3)
        .flat_map(|b| (0..3).map(move |i| m[i][0] * b[0] + m[i][1] * b[1] + m[i][2] * b[2]))
        .collect()
}

pub fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[j][i]))
}

/// Central-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let a = f(&p);
            p[i] = x[i] - h;
            let b = f(&p);
            p[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
