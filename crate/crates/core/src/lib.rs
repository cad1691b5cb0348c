//! Bayesian translational relation scoring for event temporal relation
//! extraction.
//!
//! The relation parameters of a translational scorer (TransE, MuRE, MuRP or
//! AttH) are treated as latent variables. An amortized Gaussian posterior is
//! predicted per event pair, regularized towards a knowledge-graph informed
//! prior with a maximum mean discrepancy penalty, and trained with a Monte
//! Carlo estimate of the evidence lower bound.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, configuration
//! and the command-line interface live in the `bayestrans` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod encoder;
mod error;
pub mod geometry;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod prior;
pub mod scorers;
pub mod synth;
pub mod train;
pub mod variational;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
