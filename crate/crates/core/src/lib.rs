//! Anomaly detection with class-conditioned latent-space VAEs.
//!
//! The crate is organized bottom-up:
//! - [`autodiff`]: tensors, a reverse-mode computation graph, optimizers,
//!   gradient checking, and the checkpoint container;
//! - [`datasets`]: IDX image loading and leakage-free anomaly splits;
//! - [`geometry`]: latent cluster centers on the unit sphere and seeded
//!   class-to-center assignments;
//! - [`model`]: the VAE itself (conditional or standard prior), its losses,
//!   and the training loop;
//! - [`scoring`]: latent-divergence score matrices, ensemble merging, ROC
//!   curves and AUC, exemplar selection;
//! - [`baselines`]: probabilistic PCA and a CNN-confidence classifier.

pub mod autodiff;
pub mod baselines;
pub mod datasets;
pub mod error;
pub mod geometry;
pub mod model;
pub mod scoring;

pub use autodiff::{Graph, Op, Optimizer, Real, Tensor};
pub use error::{Error, Result};
