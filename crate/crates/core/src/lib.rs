//! Attribution-fidelity toolkit for small ReLU networks.
//!
//! The crate is organised around the experimental pipeline:
//!
//! - [`data`]: the synthetic block distribution, BlockMNIST-style image
//!   assembly (procedural glyphs or IDX files) and the unmasking operator.
//! - [`nn`]: dense ReLU networks with exact reverse-mode gradients with
//!   respect to parameters and inputs (plain and guided).
//! - [`train`]: minibatch SGD and PGD adversarial training.
//! - [`attrib`]: attribution schemes that turn an input into an ordering
//!   of its coordinates.
//! - [`eval`]: the DiffROAR mask/retrain/evaluate harness, the null-block
//!   leakage proxy and the initialization-correlation diagnostic.
//! - [`theory`]: closed-form max-margin measures for wide two-layer
//!   networks together with numerical certificates of their optimality.
//!
//! All randomness is derived from explicit seeds through [`rng::SeedStream`],
//! so every result is reproducible and independent of thread scheduling.

pub mod attrib;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
