//! Dense tensors, reverse-mode differentiation, the Siren network and Adam.

mod adam;
mod graph;
mod siren;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var, MIN_ROW_NORM};
pub use siren::{LocationEncoder, SirenConfig};
pub use tensor::Tensor2;

use rand::Rng;

/// Uniform `[-limit, limit)` tensor.
pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, limit: f64) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| if limit > 0.0 { rng.random_range(-limit..limit) } else { 0.0 })
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("length matches by construction")
}
