//! RGB + depth anomaly detection for industrial inspection, desk scale.
//!
//! The pipeline: a frozen, seeded, parameter-shared patch-embedding backbone
//! extracts multiscale features from both modalities; a trainable bias-free
//! fusion adaptor maps the concatenated features into a joint space; a small
//! per-position discriminator is trained against synthesized anomalies
//! (multi-scale Gaussian perturbations injected at the image, pre-adaptor and
//! post-adaptor stages, plus Perlin-masked texture blends applied to both
//! modalities) and scores test samples per pixel. Everything runs on CPU with
//! hand-rolled gradients and is deterministic given a seed.

pub mod anomaly;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod discriminator;
pub mod error;
pub mod features;
pub mod imagery;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{CoreError, Result};
pub use scalar::Real;
