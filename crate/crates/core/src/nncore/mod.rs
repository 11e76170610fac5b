//! Dense building blocks with hand-written backward passes: layers,
//! activations, residual stacks, losses, the Adam optimizer and a central
//! finite-difference gradient checker.

mod activation;
mod adam;
mod dense;
mod gradcheck;
mod loss;
mod norm;
mod params;
mod stack;

pub use activation::{sigmoid, swish, Activation};
pub use adam::Adam;
pub use dense::{Dense, DenseGrads, LayerInput};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{focal_grad, focal_item, loss_cosine, loss_focal, loss_mse, FocalConfig, Loss, PROB_EPS};
pub use norm::{LayerNorm, NormCache};
pub use params::{join_name, Parameterized};
pub use stack::{ResidualStack, StackCache};

use ndarray::Array2;
use rand::Rng;

/// Uniform Glorot initialization for an `out x in` weight matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Array2<f64> {
    let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
    Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random_range(-s..=s))
}
