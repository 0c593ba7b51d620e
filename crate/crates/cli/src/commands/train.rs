//! `clvae train`: fit the requested ensemble and write checkpoints plus the
//! run manifest.

use super::{
    build_centers, checkpoint_rel, elapsed_ms, load_split, out_path, run_parallel, PCA_CHECKPOINT,
};
use crate::config::{ExperimentConfig, Method};
use crate::manifest::{DatasetCounts, MemberRecord, RunManifest};
use clvae::baselines::{cnn_train, PcaModel};
use clvae::model::{train, Prior};
use clvae::{Error, Result};
use std::collections::BTreeMap;
use std::time::Instant;

/// Tag a member's training failure so the operator knows which seed died.
fn member_err(kind: &str, index: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::numeric(format!("{kind} member {index}: {msg}")),
        other => other,
    }
}

pub fn run(config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let out = config.out_dir();
    std::fs::create_dir_all(out.join("checkpoints"))?;
    let methods = config.methods()?;
    let split = load_split(config)?;
    let centers = build_centers(config, split.normal_classes.len())?;
    let hash = config.hash();

    let need_vae = methods.contains(&Method::VaeMse);
    let need_cnn = methods.contains(&Method::CnnConfidence);
    let need_pca = methods.contains(&Method::PcaLoglik);

    log::info!(
        "training {} member(s) on {} images ({} normal classes), methods {:?}",
        config.ensemble.size,
        split.train.len(),
        split.normal_classes.len(),
        methods.iter().map(|m| m.tag()).collect::<Vec<_>>()
    );

    let members = run_parallel(config.ensemble.size, config.run.workers, |i| {
        let t0 = Instant::now();
        let seed = config.member_seed(i);
        let mut member_centers = centers.clone();
        member_centers.permute_assignment(seed);
        let permutation = member_centers.permutation().to_vec();
        let mut checkpoints = BTreeMap::new();
        let mut final_loss = BTreeMap::new();

        log::info!("member {i}: conditional model (seed {seed})");
        let model = train::<f32>(
            config.model_config(seed),
            Prior::Conditional(member_centers),
            &split,
        )
        .map_err(|e| member_err("clvae", i, e))?;
        let rel = checkpoint_rel("clvae", i);
        model.save(&out_path(config, &rel), &hash)?;
        if let Some(t) = model.training_log.last() {
            final_loss.insert("clvae".to_string(), t.total);
        }
        checkpoints.insert("clvae".to_string(), rel);

        if need_vae {
            log::info!("member {i}: standard-prior model");
            let model = train::<f32>(config.model_config(seed), Prior::Standard, &split)
                .map_err(|e| member_err("vae", i, e))?;
            let rel = checkpoint_rel("vae", i);
            model.save(&out_path(config, &rel), &hash)?;
            if let Some(t) = model.training_log.last() {
                final_loss.insert("vae".to_string(), t.total);
            }
            checkpoints.insert("vae".to_string(), rel);
        }

        if need_cnn {
            log::info!("member {i}: classifier");
            let model = cnn_train::<f32>(config.model_config(seed), &split)
                .map_err(|e| member_err("cnn", i, e))?;
            let rel = checkpoint_rel("cnn", i);
            model.save(&out_path(config, &rel), &hash)?;
            if let Some(&ce) = model.training_log.last() {
                final_loss.insert("cnn".to_string(), ce);
            }
            checkpoints.insert("cnn".to_string(), rel);
        }

        Ok(MemberRecord {
            index: i,
            seed,
            permutation,
            checkpoints,
            train_ms: elapsed_ms(t0),
            final_loss,
        })
    })?;

    let pca_checkpoint = if need_pca {
        log::info!("fitting PCA ({} components)", config.scoring.pca_components);
        let flat = split.train.images.to_f64();
        let model = PcaModel::fit(&flat, config.scoring.pca_components)?;
        model.save(&out_path(config, PCA_CHECKPOINT), &hash)?;
        Some(PCA_CHECKPOINT.to_string())
    } else {
        None
    };

    let manifest = RunManifest {
        config: config.clone(),
        config_hash: config.hash_hex(),
        dataset: DatasetCounts {
            train_used: split.train.len(),
            test_size: split.test.len(),
            test_anomalies: split.test_anomaly_flags.iter().filter(|&&f| f).count(),
            normal_classes: split.normal_classes.clone(),
        },
        members,
        pca_checkpoint,
        metrics: BTreeMap::new(),
        train_ms_total: elapsed_ms(started),
    };
    manifest.save(&out)?;

    println!(
        "trained {} member(s) in {} ms; manifest at {}",
        manifest.members.len(),
        manifest.train_ms_total,
        RunManifest::path_in(&out).display()
    );
    Ok(())
}
