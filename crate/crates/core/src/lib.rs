//! Prompt-conditioned generative compressed sensing with Christoffel sampling.

pub mod christoffel;
pub mod error;
pub mod generators;
pub mod harness;
pub mod linalg;
pub mod measurement;
pub mod recovery;
pub mod rng;
pub mod signals;
pub mod verification;

pub use error::{Error, Result};
