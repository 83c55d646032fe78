//! Source identification from binned boundary-exit counts of Markov particles.
//!
//! Particles start from a compactly supported density `φ(·; θ, β)` inside the
//! unit disk, move as an Itô diffusion or a piecewise-linear Markov process,
//! and are counted by the detector arc through which they leave. The crate
//! simulates such ensembles, estimates exit probabilities and their
//! θ-sensitivities pathwise, and recovers θ by stochastic gradient descent.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod estimator;
pub mod fountain;
pub mod geometry;
pub mod harness;
pub mod optimizer;
pub mod oracle;
pub mod process;
pub mod provenance;
pub mod quadrature;
pub mod rng;
pub mod sim_diffusion;
pub mod sim_plmp;
pub mod source;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
