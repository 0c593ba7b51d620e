//! The VAE: configuration, closed-form KL terms, and the training loop.
//!
//! The prior is either the standard normal or a mixture of unit-variance
//! (more generally `prior_variance`-variance) Gaussians sitting on fixed
//! cluster centers, one per normal class. Labels enter training only through
//! the choice of prior center per sample; evaluation never sees them.

pub mod arch;

use crate::autodiff::{sample_standard_normal, Graph, Optimizer, Real, Tensor};
use crate::datasets::{epoch_batch_indices, AnomalySplit};
use crate::error::{Error, Result};
use crate::geometry::ClusterCenters;
use arch::{build_vae_graph, VaeIds};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// One encoder conv layer: `filters` output channels, square `kernel`,
/// same padding, the given stride.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Prior over the latent space.
#[derive(Debug, Clone)]
pub enum Prior {
    /// Standard normal at the origin.
    Standard,
    /// Unit-sphere cluster centers, one per class, with the assignment
    /// carried by the centers' permutation.
    Conditional(ClusterCenters),
}

impl Prior {
    pub fn centers(&self) -> Option<&ClusterCenters> {
        match self {
            Prior::Standard => None,
            Prior::Conditional(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub input_channels: usize,
    pub conv_layers: Vec<ConvSpec>,
    /// Width of the dense layer between the conv stack and the latent heads.
    pub bottleneck: usize,
    pub latent_dim: usize,
    /// Loss blend: alpha * reconstruction + (1 - alpha) * KL.
    pub alpha: f64,
    /// Variance of each prior component.
    pub prior_variance: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// 28x28 single-channel architecture with a 2-D latent space:
    /// conv(32, 3, s2) -> conv(64, 3, s2) -> dense(16) -> heads.
    pub fn small_28(latent_dim: usize) -> ModelConfig {
        ModelConfig {
            input_h: 28,
            input_w: 28,
            input_channels: 1,
            conv_layers: vec![
                ConvSpec { filters: 32, kernel: 3, stride: 2 },
                ConvSpec { filters: 64, kernel: 3, stride: 2 },
            ],
            bottleneck: 16,
            latent_dim,
            alpha: 1.0 / 6.0,
            prior_variance: 1.0,
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }

    /// `small_28` with an extra leading stride-1 conv(16), the deeper
    /// variant used for the harder 28x28 dataset.
    pub fn small_28_deep(latent_dim: usize) -> ModelConfig {
        let mut c = ModelConfig::small_28(latent_dim);
        c.conv_layers.insert(
            0,
            ConvSpec { filters: 16, kernel: 3, stride: 1 },
        );
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_h == 0 || self.input_w == 0 || self.input_channels == 0 {
            return Err(Error::config("input dimensions must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be positive"));
        }
        if self.bottleneck == 0 {
            return Err(Error::config("bottleneck width must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.prior_variance <= 0.0 {
            return Err(Error::config(format!(
                "prior_variance must be positive, got {}",
                self.prior_variance
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (i, spec) in self.conv_layers.iter().enumerate() {
            if spec.filters == 0 || spec.kernel == 0 || spec.stride == 0 {
                return Err(Error::config(format!(
                    "conv layer {i} has a zero dimension"
                )));
            }
        }
        arch::validate_mirror(self)
    }
}

/// Per-sample posterior: mean and log-variance of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<GaussianParams> {
        if mean.len() != log_variance.len() {
            return Err(Error::shape(format!(
                "mean has {} entries, log_variance {}",
                mean.len(),
                log_variance.len()
            )));
        }
        if !mean.iter().chain(&log_variance).all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite posterior parameters"));
        }
        Ok(GaussianParams { mean, log_variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Loss components of one forward pass (or one epoch's mean).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Closed-form KL(N(mean, diag(exp(log_var))) || N(center, s^2 I)).
pub fn kl_conditional(params: &GaussianParams, center: &[f64], prior_variance: f64) -> Result<f64> {
    let d = params.dim();
    if center.len() != d {
        return Err(Error::shape(format!(
            "center has {} entries, posterior has {d}",
            center.len()
        )));
    }
    if prior_variance <= 0.0 {
        return Err(Error::config("prior_variance must be positive"));
    }
    let s2 = prior_variance;
    let mut sum_var = 0.0;
    let mut sum_dist = 0.0;
    let mut sum_logvar = 0.0;
    for i in 0..d {
        sum_var += params.log_variance[i].exp();
        let dm = params.mean[i] - center[i];
        sum_dist += dm * dm;
        sum_logvar += params.log_variance[i];
    }
    Ok(0.5 * ((sum_var + sum_dist) / s2 - d as f64 + d as f64 * s2.ln() - sum_logvar))
}

/// Closed-form KL against the standard normal: the conditional form with the
/// center at the origin and unit prior variance.
pub fn kl_standard(params: &GaussianParams) -> f64 {
    let origin = vec![0.0; params.dim()];
    kl_conditional(params, &origin, 1.0).expect("origin center always matches dims")
}

/// A VAE over one computation graph that serves encoding, decoding, and the
/// training loss. `T` is the compute precision.
pub struct VaeModel<T: Real> {
    pub graph: Graph<T>,
    pub ids: VaeIds,
    pub config: ModelConfig,
    pub prior: Prior,
    pub training_log: Vec<LossTerms>,
}

impl<T: Real> std::fmt::Debug for VaeModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VaeModel")
            .field("config", &self.config)
            .field("prior", &self.prior)
            .field("params", &self.graph.n_params())
            .field("epochs_logged", &self.training_log.len())
            .finish()
    }
}

/// Chunk size for full-set encoding/reconstruction; bounds im2col memory
/// without affecting results (each row is independent).
pub(crate) const EVAL_CHUNK: usize = 256;

impl<T: Real> VaeModel<T> {
    /// Fresh model with seeded parameter init.
    pub fn build(config: ModelConfig, prior: Prior) -> Result<VaeModel<T>> {
        if let Prior::Conditional(c) = &prior {
            if c.dim() != config.latent_dim {
                return Err(Error::config(format!(
                    "centers have dim {}, latent_dim is {}",
                    c.dim(),
                    config.latent_dim
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (graph, ids) = build_vae_graph::<T>(&config, &mut rng)?;
        Ok(VaeModel {
            graph,
            ids,
            config,
            prior,
            training_log: Vec::new(),
        })
    }

    /// Rebuild from a checkpoint written by [`VaeModel::save`].
    pub fn load(
        config: ModelConfig,
        prior: Prior,
        path: &Path,
        expected_hash: Option<&[u8; 32]>,
    ) -> Result<VaeModel<T>> {
        let mut model = VaeModel::build(config, prior)?;
        model.graph.load_checkpoint(path, expected_hash)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, config_hash: &[u8; 32]) -> Result<()> {
        self.graph.save_checkpoint(path, config_hash)
    }

    /// Posterior mean and log-variance for every image, as f64 [n, d] pairs.
    pub fn encode(&mut self, images: &Tensor<T>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let n = images.rows();
        let d = self.config.latent_dim;
        let mut mu = Vec::with_capacity(n * d);
        let mut lv = Vec::with_capacity(n * d);
        let mut at = 0;
        while at < n {
            let hi = (at + EVAL_CHUNK).min(n);
            let chunk = images.gather_rows(&(at..hi).collect::<Vec<_>>());
            self.graph.forward(&[(self.ids.x, chunk)])?;
            mu.extend(self.graph.value(self.ids.mu)?.data().iter().map(|v| v.as_f64()));
            lv.extend(
                self.graph
                    .value(self.ids.log_var)?
                    .data()
                    .iter()
                    .map(|v| v.as_f64()),
            );
            at = hi;
        }
        Ok((Tensor::new(vec![n, d], mu)?, Tensor::new(vec![n, d], lv)?))
    }

    /// Per-sample posteriors, validated finite.
    pub fn encode_params(&mut self, images: &Tensor<T>) -> Result<Vec<GaussianParams>> {
        let (mu, lv) = self.encode(images)?;
        (0..mu.rows())
            .map(|i| GaussianParams::new(mu.row(i).to_vec(), lv.row(i).to_vec()))
            .collect()
    }

    /// Decode latent codes [n, d] to images [n, h, w, c].
    pub fn decode(&mut self, z: &Tensor<T>) -> Result<Tensor<T>> {
        if z.shape().len() != 2 || z.shape()[1] != self.config.latent_dim {
            return Err(Error::shape(format!(
                "decode expects [n, {}], got {:?}",
                self.config.latent_dim,
                z.shape()
            )));
        }
        let n = z.rows();
        let mut out: Option<Tensor<T>> = None;
        let mut at = 0;
        while at < n {
            let hi = (at + EVAL_CHUNK).min(n);
            let chunk = z.gather_rows(&(at..hi).collect::<Vec<_>>());
            self.graph.forward(&[(self.ids.z, chunk)])?;
            let part = self.graph.value(self.ids.x_hat)?;
            out = Some(match out {
                None => part.clone(),
                Some(prev) => {
                    let mut shape = prev.shape().to_vec();
                    shape[0] += part.shape()[0];
                    let mut data = prev.into_data();
                    data.extend_from_slice(part.data());
                    Tensor::new(shape, data)?
                }
            });
            at = hi;
        }
        out.ok_or_else(|| Error::shape("decode of an empty batch"))
    }

    /// Mean squared reconstruction error per image, decoding from the
    /// posterior mean (no sampling noise).
    pub fn reconstruction_errors(&mut self, images: &Tensor<T>) -> Result<Vec<f64>> {
        let n = images.rows();
        let d = self.config.latent_dim;
        let mut out = Vec::with_capacity(n);
        let mut at = 0;
        while at < n {
            let hi = (at + EVAL_CHUNK).min(n);
            let rows: Vec<usize> = (at..hi).collect();
            let chunk = images.gather_rows(&rows);
            let eps = Tensor::zeros(&[rows.len(), d]);
            self.graph
                .forward(&[(self.ids.x, chunk.clone()), (self.ids.eps, eps)])?;
            let xh = self.graph.value(self.ids.x_hat)?;
            let w = chunk.row_len();
            for i in 0..rows.len() {
                let mse = xh.row(i)
                    .iter()
                    .zip(chunk.row(i))
                    .map(|(&a, &b)| {
                        let dv = a.as_f64() - b.as_f64();
                        dv * dv
                    })
                    .sum::<f64>()
                    / w as f64;
                out.push(mse);
            }
            at = hi;
        }
        Ok(out)
    }

    /// Prior center rows for a batch of class indices.
    fn center_rows(&self, class_idx: &[usize]) -> Tensor<T> {
        let d = self.config.latent_dim;
        let mut data = Vec::with_capacity(class_idx.len() * d);
        match &self.prior {
            Prior::Standard => data.resize(class_idx.len() * d, T::zero()),
            Prior::Conditional(centers) => {
                for &ci in class_idx {
                    data.extend(centers.center_for_class(ci).iter().map(|&v| T::from_f64(v)));
                }
            }
        }
        Tensor::new(vec![class_idx.len(), d], data).expect("length matches by construction")
    }

    /// Loss terms for one batch with explicit reparameterization noise.
    pub fn total_loss(
        &mut self,
        images: &Tensor<T>,
        class_idx: &[usize],
        eps: &Tensor<T>,
    ) -> Result<LossTerms> {
        let mu_y = self.center_rows(class_idx);
        self.graph.forward(&[
            (self.ids.x, images.clone()),
            (self.ids.eps, eps.clone()),
            (self.ids.mu_y, mu_y),
        ])?;
        self.loss_terms()
    }

    fn loss_terms(&self) -> Result<LossTerms> {
        Ok(LossTerms {
            reconstruction: self.graph.value(self.ids.loss_rec)?.data()[0].as_f64(),
            kl: self.graph.value(self.ids.loss_kl)?.data()[0].as_f64(),
            total: self.graph.value(self.ids.loss)?.data()[0].as_f64(),
        })
    }
}

/// Train a VAE on the normal-class training images of a split.
///
/// The conditional prior requires exactly one center per normal class.
/// All randomness (init, shuffles, reparameterization noise) flows from
/// `config.seed`, so equal inputs give bitwise-equal models.
pub fn train<T: Real>(config: ModelConfig, prior: Prior, split: &AnomalySplit) -> Result<VaeModel<T>> {
    if let Prior::Conditional(c) = &prior {
        if c.len() != split.normal_classes.len() {
            return Err(Error::config(format!(
                "{} centers for {} normal classes",
                c.len(),
                split.normal_classes.len()
            )));
        }
    }
    let mut model: VaeModel<T> = VaeModel::build(config, prior)?;
    let mut opt: Optimizer<T> = Optimizer::adam(model.config.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(0x5EED));

    let n = split.train.len();
    if n == 0 {
        return Err(Error::config("training set is empty"));
    }
    let class_idx: Vec<usize> = split
        .train
        .labels
        .iter()
        .map(|&l| split.class_index(l))
        .collect::<Result<_>>()?;
    let train_images: Tensor<T> = split.train.images.cast();

    let d = model.config.latent_dim;
    for epoch in 0..model.config.epochs {
        let mut sums = LossTerms {
            reconstruction: 0.0,
            kl: 0.0,
            total: 0.0,
        };
        let batches =
            epoch_batch_indices(n, model.config.batch_size, model.config.seed, epoch as u64);
        let n_batches = batches.len();
        for (bi, batch) in batches.into_iter().enumerate() {
            let images = train_images.gather_rows(&batch);
            let idx: Vec<usize> = batch.iter().map(|&i| class_idx[i]).collect();
            let eps: Tensor<T> = sample_standard_normal(&[batch.len(), d], &mut rng);
            let terms = model.total_loss(&images, &idx, &eps)?;
            if !terms.total.is_finite() {
                return Err(Error::numeric(format!(
                    "loss became non-finite at epoch {epoch}, batch {bi}: {terms:?}"
                )));
            }
            model.graph.backward(model.ids.loss)?;
            opt.step(&mut model.graph)?;
            sums.reconstruction += terms.reconstruction;
            sums.kl += terms.kl;
            sums.total += terms.total;
        }
        let k = n_batches as f64;
        let epoch_terms = LossTerms {
            reconstruction: sums.reconstruction / k,
            kl: sums.kl / k,
            total: sums.total / k,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} (rec {:.6}, kl {:.6})",
            epoch_terms.total,
            epoch_terms.reconstruction,
            epoch_terms.kl
        );
        model.training_log.push(epoch_terms);
    }
    Ok(model)
}
