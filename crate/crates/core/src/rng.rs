//! Seeded random sources. Every stochastic routine takes an explicit seed
//! or generator so runs are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Matrix, Tensor3};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_tensor(rng: &mut impl Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Tensor3 {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.random_range(lo..hi))
}

pub fn normal_tensor(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> Tensor3 {
    Tensor3::from_fn(h, w, c, |_, _, _| standard_normal(rng))
}
