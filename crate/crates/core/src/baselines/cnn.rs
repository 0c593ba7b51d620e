//! Classifier baseline: the encoder stack with a softmax head over the
//! normal classes, scored by class confidence (an input no class claims
//! confidently is anomalous).

use crate::autodiff::{Graph, Optimizer, Real, Tensor};
use crate::datasets::{epoch_batch_indices, AnomalySplit};
use crate::error::{Error, Result};
use crate::model::arch::{build_cnn_graph, CnnIds};
use crate::model::{ModelConfig, EVAL_CHUNK};
use crate::scoring::{ScoreKind, ScoreMatrix, DENSITY_FLOOR};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub struct CnnModel<T: Real> {
    pub graph: Graph<T>,
    pub ids: CnnIds,
    pub config: ModelConfig,
    /// Labels of the classes behind each output column.
    pub class_ids: Vec<u8>,
    /// Mean training cross-entropy per epoch.
    pub training_log: Vec<f64>,
}

impl<T: Real> std::fmt::Debug for CnnModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CnnModel")
            .field("config", &self.config)
            .field("class_ids", &self.class_ids)
            .field("epochs_logged", &self.training_log.len())
            .finish()
    }
}

impl<T: Real> CnnModel<T> {
    pub fn build(config: ModelConfig, class_ids: Vec<u8>) -> Result<CnnModel<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (graph, ids) = build_cnn_graph::<T>(&config, class_ids.len(), &mut rng)?;
        Ok(CnnModel {
            graph,
            ids,
            config,
            class_ids,
            training_log: Vec::new(),
        })
    }

    pub fn load(
        config: ModelConfig,
        class_ids: Vec<u8>,
        path: &Path,
        expected_hash: Option<&[u8; 32]>,
    ) -> Result<CnnModel<T>> {
        let mut model = CnnModel::build(config, class_ids)?;
        model.graph.load_checkpoint(path, expected_hash)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, config_hash: &[u8; 32]) -> Result<()> {
        self.graph.save_checkpoint(path, config_hash)
    }

    /// Class probabilities for every image, as f64 [n, n_classes].
    pub fn probabilities(&mut self, images: &Tensor<T>) -> Result<Tensor<f64>> {
        let n = images.rows();
        let k = self.class_ids.len();
        let mut out = Vec::with_capacity(n * k);
        let mut at = 0;
        while at < n {
            let hi = (at + EVAL_CHUNK).min(n);
            let chunk = images.gather_rows(&(at..hi).collect::<Vec<_>>());
            self.graph.forward(&[(self.ids.x, chunk)])?;
            out.extend(
                self.graph
                    .value(self.ids.probs)?
                    .data()
                    .iter()
                    .map(|v| v.as_f64()),
            );
            at = hi;
        }
        Tensor::new(vec![n, k], out)
    }

    /// Confidence per class as a likelihood-style score matrix; its anomaly
    /// score is the negated best-class confidence.
    pub fn score_matrix(&mut self, images: &Tensor<T>) -> Result<ScoreMatrix> {
        let probs = self.probabilities(images)?;
        let n = probs.rows();
        let k = self.class_ids.len();
        let values: Vec<f64> = probs.data().iter().map(|&p| p.max(DENSITY_FLOOR)).collect();
        ScoreMatrix::new(n, k, values, Some(self.class_ids.clone()), ScoreKind::Likelihood)
    }

    /// Fraction of images whose most-confident class matches `class_idx`.
    pub fn accuracy(&mut self, images: &Tensor<T>, class_idx: &[usize]) -> Result<f64> {
        if class_idx.len() != images.rows() {
            return Err(Error::shape(format!(
                "{} class indices for {} images",
                class_idx.len(),
                images.rows()
            )));
        }
        let probs = self.probabilities(images)?;
        let mut hits = 0usize;
        for (i, &ci) in class_idx.iter().enumerate() {
            let row = probs.row(i);
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            if best == ci {
                hits += 1;
            }
        }
        Ok(hits as f64 / class_idx.len() as f64)
    }
}

/// Train the classifier on the normal-class training images of a split.
/// Deterministic given `config.seed`.
pub fn cnn_train<T: Real>(config: ModelConfig, split: &AnomalySplit) -> Result<CnnModel<T>> {
    let mut model: CnnModel<T> = CnnModel::build(config, split.normal_classes.clone())?;
    let mut opt: Optimizer<T> = Optimizer::adam(model.config.learning_rate)?;

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
    let k = model.class_ids.len();

    for epoch in 0..model.config.epochs {
        let mut sum = 0.0;
        let batches =
            epoch_batch_indices(n, model.config.batch_size, model.config.seed, epoch as u64);
        let n_batches = batches.len();
        for (bi, batch) in batches.into_iter().enumerate() {
            let images = train_images.gather_rows(&batch);
            let mut onehot = vec![T::zero(); batch.len() * k];
            for (row, &i) in batch.iter().enumerate() {
                onehot[row * k + class_idx[i]] = T::one();
            }
            let targets = Tensor::new(vec![batch.len(), k], onehot)?;
            model
                .graph
                .forward(&[(model.ids.x, images), (model.ids.targets, targets)])?;
            let ce = model.graph.value(model.ids.loss)?.data()[0].as_f64();
            if !ce.is_finite() {
                return Err(Error::numeric(format!(
                    "cross-entropy became non-finite at epoch {epoch}, batch {bi}"
                )));
            }
            model.graph.backward(model.ids.loss)?;
            opt.step(&mut model.graph)?;
            sum += ce;
        }
        let mean = sum / n_batches as f64;
        log::info!("classifier epoch {epoch}: cross-entropy {mean:.6}");
        model.training_log.push(mean);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::LabeledImageSet;
    use rand::Rng;

    /// Nine-class synthetic set on 8x8 images: class c lights row c low-noise.
    fn nine_class_split(per_class: usize, seed: u64) -> AnomalySplit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 9 * per_class;
        let mut data = vec![0.0f32; n * 64];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 9) as u8;
            labels.push(class);
            for r in 0..8 {
                for c in 0..8 {
                    let base: f32 = if r == class as usize { 0.9 } else { 0.1 };
                    data[i * 64 + r * 8 + c] =
                        (base + 0.05 * rng.random_range(-1.0..1.0f32)).clamp(0.0, 1.0);
                }
            }
        }
        AnomalySplit {
            train: LabeledImageSet {
                images: Tensor::new(vec![n, 8, 8, 1], data).unwrap(),
                labels,
            },
            test: LabeledImageSet {
                images: Tensor::zeros(&[1, 8, 8, 1]),
                labels: vec![0],
            },
            test_anomaly_flags: vec![false],
            anomaly_class: 9,
            normal_classes: (0..9).collect(),
        }
    }

    fn cnn_config(epochs: usize) -> ModelConfig {
        ModelConfig {
            input_h: 8,
            input_w: 8,
            input_channels: 1,
            conv_layers: vec![
                crate::model::ConvSpec { filters: 8, kernel: 3, stride: 2 },
                crate::model::ConvSpec { filters: 16, kernel: 3, stride: 2 },
            ],
            bottleneck: 16,
            latent_dim: 2,
            alpha: 1.0 / 6.0,
            prior_variance: 1.0,
            epochs,
            batch_size: 32,
            learning_rate: 2e-3,
            seed: 4,
        }
    }

    #[test]
    fn untrained_accuracy_is_near_chance() {
        let split = nine_class_split(100, 6);
        let mut model: CnnModel<f32> = cnn_train(cnn_config(0), &split).unwrap();
        let class_idx: Vec<usize> = split.train.labels.iter().map(|&l| l as usize).collect();
        let images: Tensor<f32> = split.train.images.clone();
        let acc = model.accuracy(&images, &class_idx).unwrap();
        assert!(
            (acc - 1.0 / 9.0).abs() < 0.05,
            "untrained accuracy {acc} not near 1/9"
        );
    }

    #[test]
    fn training_reduces_cross_entropy() {
        let split = nine_class_split(20, 1);
        let model: CnnModel<f32> = cnn_train(cnn_config(3), &split).unwrap();
        assert_eq!(model.training_log.len(), 3);
        assert!(
            model.training_log[2] < model.training_log[0],
            "{:?}",
            model.training_log
        );
    }

    #[test]
    fn probabilities_are_normalized() {
        let split = nine_class_split(5, 2);
        let mut model: CnnModel<f32> = cnn_train(cnn_config(1), &split).unwrap();
        let images: Tensor<f32> = split.train.images.clone();
        let probs = model.probabilities(&images).unwrap();
        for i in 0..probs.rows() {
            let sum: f64 = probs.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
            assert!(probs.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn scores_are_independent_of_batch_order() {
        let split = nine_class_split(4, 3);
        let mut model: CnnModel<f32> = cnn_train(cnn_config(1), &split).unwrap();
        let images: Tensor<f32> = split.train.images.clone();
        let forward = model.probabilities(&images).unwrap();
        let reversed_idx: Vec<usize> = (0..images.rows()).rev().collect();
        let reversed = model.probabilities(&images.gather_rows(&reversed_idx)).unwrap();
        for i in 0..images.rows() {
            let a = forward.row(i);
            let b = reversed.row(images.rows() - 1 - i);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn score_matrix_negates_best_confidence() {
        let split = nine_class_split(4, 8);
        let mut model: CnnModel<f32> = cnn_train(cnn_config(1), &split).unwrap();
        let images: Tensor<f32> = split.train.images.clone();
        let m = model.score_matrix(&images).unwrap();
        let probs = model.probabilities(&images).unwrap();
        let scores = m.anomaly_scores();
        for i in 0..images.rows() {
            let best = probs.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((scores[i] + best).abs() < 1e-12);
            assert!(scores[i] <= -1.0 / 9.0 + 1e-9, "no softmax max below uniform");
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_probabilities() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.clvc");
        let split = nine_class_split(4, 9);
        let mut model: CnnModel<f32> = cnn_train(cnn_config(1), &split).unwrap();
        let images: Tensor<f32> = split.train.images.clone();
        let before = model.probabilities(&images).unwrap();
        let hash = [1u8; 32];
        model.save(&path, &hash).unwrap();

        let mut other = cnn_config(0);
        other.seed = 77;
        let mut loaded: CnnModel<f32> =
            CnnModel::load(other, (0..9).collect(), &path, Some(&hash)).unwrap();
        let after = loaded.probabilities(&images).unwrap();
        assert_eq!(before.data(), after.data());
    }
}
