//! Seeded uniform data for benchmarks, weights and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;
use crate::tensor::{Filter, Layout, Matrix, Shape, Tensor};

fn values<T: Real>(len: usize, seed: u64, lo: f64, hi: f64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| T::from_f64_lossy(rng.gen_range(lo..hi))).collect()
}

/// Values uniform in `[-1, 1)`, generated in the layout's flat order.
pub fn uniform_tensor<T: Real>(shape: Shape, layout: Layout, seed: u64) -> Tensor<T> {
    Tensor::new(shape, layout, values(shape.len(), seed, -1.0, 1.0)).expect("length matches shape")
}

pub fn uniform_filter<T: Real>(c_o: usize, c_i: usize, f_h: usize, f_w: usize, seed: u64) -> Filter<T> {
    Filter::new(c_o, c_i, f_h, f_w, values(c_o * c_i * f_h * f_w, seed, -1.0, 1.0))
        .expect("filter dims are valid")
}

pub fn uniform_matrix<T: Real>(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Matrix<T> {
    Matrix::new(rows, cols, values(rows * cols, seed, lo, hi)).expect("matrix dims are valid")
}
