//! Differentiable sparse feature selection, a support-masked transformer
//! autoencoder and representation matching for interpretable tabular
//! prediction.

pub mod analysis;
pub mod ata;
pub mod data;
pub mod controller;
pub mod dgfs;
pub mod diff;
pub mod error;
pub mod gumbel;
pub mod model;
pub mod params;
pub mod rml;

pub use error::{Error, Result};
