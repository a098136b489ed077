//! Sparse-autoencoder edit directions for token embeddings.
//!
//! The pipeline has three stages:
//!
//! 1. [`sae`] trains a BatchTopK sparse autoencoder on individual token
//!    embeddings and calibrates a global inference threshold.
//! 2. [`directions`] encodes source/target prompt pairs, max-pools the token
//!    codes, and keeps only the latents whose target/source ratio stands out.
//!    Many pairs are merged through the top singular vector of their stack.
//! 3. [`editing`] adds a scaled direction to one token's code, decodes it,
//!    and produces one replacement embedding per diffusion step following an
//!    exponential, capped schedule.
//!
//! [`synthkit`] plants a known dictionary and attribute so every stage can be
//! scored against ground truth; [`dataio`] holds the on-disk formats.

pub mod dataio;
pub mod directions;
pub mod editing;
mod error;
pub mod linalg;
pub mod sae;
pub mod synthkit;

pub use error::{Error, ErrorKind, Result};
