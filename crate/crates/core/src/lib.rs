//! Bayesian inference for hidden semi-Markov models through a sparse
//! embedded-HMM likelihood approximation.

pub mod ad;
pub mod analysis;
pub mod embedding;
pub mod error;
pub mod harmonic;
pub mod inference;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod priors;
pub mod selection;
pub mod simulate;
pub mod transform;

pub use error::{Error, Result};
