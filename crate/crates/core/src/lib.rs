//! Key-controlled steganography with a fixed decoder network.
//!
//! A secret bit tensor is hidden in a cover image by optimising a small
//! perturbation so that a frozen convolutional decoder reproduces the secret
//! only after the image is encrypted with the correct key. Without the key,
//! or with a wrong one, the decoder output is far from the secret.

pub mod ablation;
pub mod cost;
pub mod embed;
pub mod error;
pub mod fnn;
pub mod image;
pub mod keystream;
pub mod lbfgs;
pub mod losses;
pub mod message;
pub mod metrics;
pub mod steganalysis;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
