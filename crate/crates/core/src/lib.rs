//! Dust-obscured orbital image patches: classification, archive filtering,
//! synthetic dust noise, denoising models and restoration metrics.

pub mod autoencoder;
pub mod classifiers;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod noise;
pub mod npy;
pub mod npz;
pub mod pipeline;
pub mod pix2pix;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
