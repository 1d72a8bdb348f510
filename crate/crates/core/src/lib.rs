//! Exact stationary distributions and light-tail asymptotics for Markov
//! chains of M/G/1 type.
//!
//! The pipeline is [`model`] (kernel and generating functions) →
//! [`fundamental`] (G, R, boundary vector, Ramaswami recursion) →
//! [`spectral`] (decay parameter θ and period τ) → [`asymptotics`]
//! (regime and prefactors), with [`oracle`] measuring the exact tails the
//! predictions are checked against.

pub mod analysis;
pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod fundamental;
mod graph;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod spectral;

pub use error::{Error, Result};
