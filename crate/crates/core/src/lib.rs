//! Random-walk mixing and diffusion fidelity of multi-head causal attention.
//!
//! The graph side ([`attngraph`], [`mixing`], [`fidelity`]) is exact and small;
//! the model side ([`microformer`], [`taskdata`]) trains toy transformers whose
//! attention maps feed the same estimators. [`runner`] ties both into the
//! experiment pipeline used by the CLI.

pub mod attngraph;
pub mod error;
pub mod fidelity;
pub mod io;
pub mod microformer;
pub mod mixing;
pub mod numerics;
pub mod record;
pub mod runner;
pub mod stats;
pub mod taskdata;

pub use error::{Error, Result};
