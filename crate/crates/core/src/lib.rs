//! Contrastive location-image pretraining of spherical-harmonics location
//! encoders, with downstream evaluation and embedding analysis.
//!
//! The pipeline: [`sphere`] turns coordinates into a real spherical-harmonics
//! basis, [`nn`] provides the Siren network, reverse-mode differentiation and
//! Adam, [`clip`] holds the symmetric contrastive objective, [`pretrain`]
//! runs the training loop, [`downstream`] fits MLP heads on frozen
//! embeddings and [`analysis`] computes similarity maps and PCA.

pub mod analysis;
pub mod cli;
pub mod clip;
pub mod dataio;
pub mod downstream;
pub mod error;
pub mod nn;
pub mod pretrain;
pub mod rng;
pub mod sphere;

pub use error::{Error, Result};
pub use nn::Tensor2;
pub use sphere::GeoCoordinate;
