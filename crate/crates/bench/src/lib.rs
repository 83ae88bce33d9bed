//! Shared fixtures for the criterion benches.

use ndarray::Array2;
use trq_core::classifier::{init_mlp, MlpParams};

/// A randomly initialised classifier and a matching batch of inputs.
pub fn random_mlp(dims: [usize; 5], n_rows: usize, seed: u64) -> (MlpParams, Array2<f64>) {
    let params = init_mlp(dims, seed).expect("valid dims");
    let inputs = Array2::from_shape_fn((n_rows, dims[0]), |(i, j)| {
        (((i * 31 + j * 17) % 101) as f64 / 50.0) - 1.0
    });
    (params, inputs)
}
