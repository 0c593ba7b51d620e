//! The four verbs and their shared plumbing.

pub mod evaluate;
pub mod export_latent;
pub mod report;
pub mod train;

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use clvae::datasets::{load_idx, make_anomaly_split, subsample_indices, AnomalySplit};
use clvae::geometry::{circle_centers, force_relaxation, sphere_centers_nine, ClusterCenters};
use clvae::{Error, Result};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Load the IDX files, carve out the anomaly split, and apply the training
/// subsample. Deterministic in the config.
pub fn load_split(config: &ExperimentConfig) -> Result<AnomalySplit> {
    let train = load_idx(
        &config.data_path(&config.dataset.train_images),
        &config.data_path(&config.dataset.train_labels),
    )?;
    let test = load_idx(
        &config.data_path(&config.dataset.test_images),
        &config.data_path(&config.dataset.test_labels),
    )?;
    let expect = (config.model.input_h, config.model.input_w);
    if train.image_dims() != expect {
        return Err(Error::config(format!(
            "dataset images are {:?}, model expects {expect:?}",
            train.image_dims()
        )));
    }
    let mut split = make_anomaly_split(
        &train,
        &test,
        config.dataset.anomaly_class,
        config.run.seed,
    )?;
    let keep = config.dataset.train_subsample;
    if keep > 0 && keep < split.train.len() {
        let idx = subsample_indices(split.train.len(), keep, config.run.seed);
        split.train = split.train.select(&idx);
    }
    Ok(split)
}

/// Unit-sphere centers for the normal classes: the unit circle in 2-D, the
/// fixed nine-point layout for nine classes in 3-D, force relaxation
/// otherwise. One geometry per run; members differ only in class
/// assignment.
pub fn build_centers(config: &ExperimentConfig, n_classes: usize) -> Result<ClusterCenters> {
    let d = config.model.latent_dim;
    if d == 2 {
        circle_centers(n_classes)
    } else if d == 3 && n_classes == 9 {
        Ok(sphere_centers_nine())
    } else {
        force_relaxation(n_classes, d, config.run.seed, 20_000, 1e-9)
    }
}

pub fn checkpoint_rel(kind: &str, member: usize) -> String {
    format!("checkpoints/{kind}-{member}.clvc")
}

pub const PCA_CHECKPOINT: &str = "checkpoints/pca.clvc";

pub fn metrics_rel(name: &str) -> String {
    format!("metrics/{name}")
}

pub fn out_path(config: &ExperimentConfig, rel: &str) -> PathBuf {
    config.out_dir().join(rel)
}

/// Path of a member's checkpoint, or a retrain hint when it was never
/// trained.
pub fn member_checkpoint(
    config: &ExperimentConfig,
    manifest: &RunManifest,
    kind: &str,
    index: usize,
) -> Result<PathBuf> {
    let member = manifest
        .members
        .get(index)
        .ok_or_else(|| Error::checkpoint(format!("manifest has no member {index}")))?;
    let rel = member.checkpoints.get(kind).ok_or_else(|| {
        Error::checkpoint(format!(
            "member {index} has no {kind} checkpoint; retrain with the matching method enabled"
        ))
    })?;
    Ok(out_path(config, rel))
}

/// Run `job(0..n)` across up to `workers` scoped threads, preserving
/// result order and surfacing the first error.
pub fn run_parallel<T, F>(n: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let result = job(i);
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("job ran"))
        .collect()
}

/// Milliseconds elapsed since `start`.
pub fn elapsed_ms(start: std::time::Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_preserves_order_and_errors() {
        let out = run_parallel(8, 3, |i| Ok::<usize, Error>(i * i)).unwrap();
        assert_eq!(out, vec![0, 1, 4, 9, 16, 25, 36, 49]);
        let err = run_parallel(4, 2, |i| {
            if i == 2 {
                Err(Error::numeric("boom"))
            } else {
                Ok(i)
            }
        });
        assert!(err.is_err());
    }

    #[test]
    fn centers_choose_geometry_by_dimension() {
        let mut config = ExperimentConfig::default();
        config.model.latent_dim = 2;
        let c = build_centers(&config, 9).unwrap();
        assert_eq!((c.len(), c.dim()), (9, 2));
        config.model.latent_dim = 3;
        let c = build_centers(&config, 9).unwrap();
        assert_eq!((c.len(), c.dim()), (9, 3));
        config.model.latent_dim = 4;
        let c = build_centers(&config, 5).unwrap();
        assert_eq!((c.len(), c.dim()), (5, 4));
        assert!(c.max_norm_error() < 1e-9);
    }
}
