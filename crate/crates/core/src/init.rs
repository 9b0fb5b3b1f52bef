//! Parameter initialization.

use rand::Rng;

use crate::diffcore::{Scalar, Tensor};

/// Uniform in `±√(6 / (fan_in + fan_out))`, with `fan_in = rows` and
/// `fan_out = cols`.
pub fn glorot_uniform<F: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<F> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, bound)
}

/// Uniform in `±bound`.
pub fn uniform<F: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor<F> {
    let data = (0..rows * cols)
        .map(|_| F::from_f64(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(rows, cols, data).expect("positive extents")
}
