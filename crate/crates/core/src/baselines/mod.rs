//! Non-VAE comparison methods: PCA with a probabilistic likelihood score
//! and a confidence-scored convolutional classifier.

pub mod cnn;
pub mod pca;

pub use cnn::{cnn_train, CnnModel};
pub use pca::PcaModel;
