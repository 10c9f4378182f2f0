//! Estimation of latent stochastic intensities of doubly stochastic Poisson
//! processes with neural drift and control networks trained on an evidence
//! lower bound over SDE path measures.
//!
//! The numerical core (`nn`, `sde`, `inference`) is generic over [`Scalar`];
//! the aliases below fix it to `f64`, which is what the experiment driver uses.

pub mod baselines;
pub mod checkpoint;
pub mod dspp;
mod error;
pub mod inference;
pub mod nn;
pub mod queueing;
mod scalar;
pub mod sde;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp = nn::MlpModel<f64>;
pub type Path = sde::IntensityPath<f64>;
pub type Noise = sde::NoisePath<f64>;
pub type Model = inference::VariationalModel<f64>;
