//! Dense matrices, a recorded reverse-mode tape, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod linear;
mod matrix;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use linear::Linear;
pub use matrix::Matrix;
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, PoolMode, Tape, Var};

use rand::Rng;

/// Matrix with entries uniform in `[lo, hi)`.
pub fn random_matrix<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("consistent shape")
}
