//! Exact finite-size checks of self-averaging for symmetry-breaking
//! perturbations in quantum and classical spin models.
//!
//! The crate builds three perturbed families (replicated random energy model,
//! antiferromagnetic Heisenberg chain, replicated quantum Edwards–Anderson
//! chain), evaluates Gibbs expectations and Duhamel products by exact
//! diagonalisation or enumeration, and runs the finite-size checks in
//! [`verify`].

pub mod cli;
pub mod disorder;
pub mod error;
pub mod gibbs;
pub mod models;
pub mod spin_algebra;
pub mod verify;

pub use error::{Error, Result};
