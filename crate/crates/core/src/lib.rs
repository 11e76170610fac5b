//! Top-N recommendation with a shallow item-item autoencoder (closed-form and
//! gradient-trained), a deep variational autoencoder trained with focal loss
//! and split-input augmentation, and their elementwise-product combination.
//!
//! Everything is implemented on dense `f64` arrays with hand-derived
//! gradients; see [`nncore`] for the building blocks.

pub mod checkpoint;
pub mod dataio;
pub mod ease;
pub mod error;
pub mod eval;
pub mod flvae;
pub mod nncore;
pub mod rng;
pub mod synthetic;
pub mod train;
pub mod vasp;

pub use error::{Error, Result};
