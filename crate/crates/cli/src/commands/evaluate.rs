//! `clvae evaluate`: score the held-out test split with every requested
//! method, write per-method metrics, and summarize.

use super::{
    build_centers, elapsed_ms, load_split, member_checkpoint, metrics_rel, out_path, run_parallel,
};
use crate::config::{ExperimentConfig, Method};
use crate::manifest::RunManifest;
use crate::outputs::{write_csv, write_json, write_png_grid};
use crate::summary::{CurveRow, EvalSummary, MethodSummary, SUMMARY_REL};
use clvae::baselines::{CnnModel, PcaModel};
use clvae::datasets::AnomalySplit;
use clvae::geometry::ClusterCenters;
use clvae::model::{Prior, VaeModel};
use clvae::scoring::{
    ensemble_auc_curve, hardest_examples, latent_fixed_pdf, merge_ensemble, roc_auc,
    ClassGaussians, MergeMethod, ScoreKind, ScoreMatrix,
};
use clvae::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

pub fn run(run_dir: &Path, methods: Option<&str>, workers: Option<usize>) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::load(run_dir)?;
    let config = manifest.config.clone();
    if config.hash_hex() != manifest.config_hash {
        return Err(Error::checkpoint(
            "manifest config does not match its recorded hash; the run directory was edited",
        ));
    }
    let hash = manifest.config_hash_bytes()?;

    let methods = match methods {
        Some(list) => {
            let mut parsed = list
                .split(',')
                .map(|s| Method::parse(s.trim()))
                .collect::<Result<Vec<_>>>()?;
            parsed.sort();
            parsed.dedup();
            if parsed.is_empty() {
                return Err(Error::config("no methods requested"));
            }
            parsed
        }
        None => config.methods()?,
    };
    let workers = workers.unwrap_or(config.run.workers).max(1);

    let split = load_split(&config)?;
    let centers = build_centers(&config, split.normal_classes.len())?;
    let flags = split.test_anomaly_flags.clone();
    let config_merge = config.merge_method();

    let mut summaries: BTreeMap<String, MethodSummary> = BTreeMap::new();
    for method in &methods {
        let t0 = Instant::now();
        let matrices = member_matrices(*method, &config, &manifest, &split, &centers, &hash, workers)?;
        let refs: Vec<&ScoreMatrix> = matrices.iter().collect();
        let merge = match matrices[0].kind() {
            ScoreKind::Likelihood => config_merge,
            ScoreKind::NegatedError => MergeMethod::Arithmetic,
        };
        let merged = merge_ensemble(&refs, merge)?;
        let scores = merged.anomaly_scores();
        let roc = roc_auc(&scores, &flags)?;
        let curve = ensemble_auc_curve(&refs, &flags, merge, config.run.seed)?;

        let tag = method.tag();
        let mut files = BTreeMap::new();

        let scores_rel = metrics_rel(&format!("scores-{tag}.csv"));
        let rows: Vec<Vec<String>> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                vec![
                    i.to_string(),
                    (flags[i] as u8).to_string(),
                    s.to_string(),
                ]
            })
            .collect();
        write_csv(&run_dir.join(&scores_rel), &["id", "anomaly", "score"], rows)?;
        files.insert("scores".to_string(), scores_rel);

        let roc_rel = metrics_rel(&format!("roc-{tag}.csv"));
        let rows: Vec<Vec<String>> = roc
            .points
            .iter()
            .map(|&(fpr, tpr)| vec![fpr.to_string(), tpr.to_string()])
            .collect();
        write_csv(&run_dir.join(&roc_rel), &["fpr", "tpr"], rows)?;
        files.insert("roc".to_string(), roc_rel);

        let curve_rel = metrics_rel(&format!("curve-{tag}.csv"));
        let rows: Vec<Vec<String>> = curve
            .iter()
            .map(|p| {
                vec![
                    p.k.to_string(),
                    p.mean_auc.to_string(),
                    p.lo.to_string(),
                    p.hi.to_string(),
                    p.n_subsets.to_string(),
                ]
            })
            .collect();
        write_csv(
            &run_dir.join(&curve_rel),
            &["k", "mean_auc", "lo", "hi", "n_subsets"],
            rows,
        )?;
        files.insert("curve".to_string(), curve_rel);

        let (missed, alarms) = hardest_examples(&scores, &flags, config.scoring.exemplars);
        for (name, idx) in [("missed", missed), ("alarms", alarms)] {
            if idx.is_empty() {
                continue;
            }
            let rel = metrics_rel(&format!("exemplars-{tag}-{name}.png"));
            write_png_grid(&run_dir.join(&rel), &split.test.images, &idx, idx.len())?;
            files.insert(name.to_string(), rel);
        }

        for (name, rel) in &files {
            manifest.metrics.insert(format!("{tag}.{name}"), rel.clone());
        }
        println!(
            "{tag}: auc {:.4} over {} member(s), merge {}",
            roc.auc,
            matrices.len(),
            merge
        );
        summaries.insert(
            tag.to_string(),
            MethodSummary {
                auc: roc.auc,
                merge: merge.to_string(),
                members: matrices.len(),
                curve: curve.iter().map(CurveRow::from).collect(),
                eval_ms: elapsed_ms(t0),
                files,
            },
        );
    }

    let summary = EvalSummary {
        config_hash: manifest.config_hash.clone(),
        dataset: manifest.dataset.clone(),
        member_seeds: manifest.members.iter().map(|m| m.seed).collect(),
        methods: summaries,
        eval_ms_total: elapsed_ms(started),
    };
    write_json(&run_dir.join(SUMMARY_REL), &summary)?;
    manifest
        .metrics
        .insert("summary".to_string(), SUMMARY_REL.to_string());
    manifest.save(run_dir)?;
    println!("summary at {}", run_dir.join(SUMMARY_REL).display());
    Ok(())
}

/// One likelihood or error matrix per ensemble member for `method`.
fn member_matrices(
    method: Method,
    config: &ExperimentConfig,
    manifest: &RunManifest,
    split: &AnomalySplit,
    centers: &ClusterCenters,
    hash: &[u8; 32],
    workers: usize,
) -> Result<Vec<ScoreMatrix>> {
    let n_members = manifest.members.len();
    let fitted = config.scoring.latent == "fitted";
    match method {
        Method::ClvaeLatent => run_parallel(n_members, workers, |i| {
            let seed = config.member_seed(i);
            let mut member_centers = centers.clone();
            member_centers.permute_assignment(seed);
            let path = member_checkpoint(config, manifest, "clvae", i)?;
            let mut model = VaeModel::<f32>::load(
                config.model_config(seed),
                Prior::Conditional(member_centers.clone()),
                &path,
                Some(hash),
            )?;
            let (mu_test, _) = model.encode(&split.test.images)?;
            if fitted {
                let (mu_train, _) = model.encode(&split.train.images)?;
                let class_idx = split
                    .train
                    .labels
                    .iter()
                    .map(|&l| split.class_index(l))
                    .collect::<Result<Vec<_>>>()?;
                let gaussians =
                    ClassGaussians::fit(&mu_train, &class_idx, &split.normal_classes)?;
                gaussians.score(&mu_test)
            } else {
                latent_fixed_pdf(&mu_test, &member_centers, &split.normal_classes)
            }
        }),
        Method::ClvaeMse | Method::VaeMse => {
            let (kind, prior) = if method == Method::ClvaeMse {
                ("clvae", None)
            } else {
                ("vae", Some(Prior::Standard))
            };
            run_parallel(n_members, workers, |i| {
                let seed = config.member_seed(i);
                let prior = match &prior {
                    Some(p) => p.clone(),
                    None => {
                        let mut member_centers = centers.clone();
                        member_centers.permute_assignment(seed);
                        Prior::Conditional(member_centers)
                    }
                };
                let path = member_checkpoint(config, manifest, kind, i)?;
                let mut model =
                    VaeModel::<f32>::load(config.model_config(seed), prior, &path, Some(hash))?;
                let errors = model.reconstruction_errors(&split.test.images)?;
                ScoreMatrix::from_errors(&errors)
            })
        }
        Method::CnnConfidence => run_parallel(n_members, workers, |i| {
            let seed = config.member_seed(i);
            let path = member_checkpoint(config, manifest, "cnn", i)?;
            let mut model = CnnModel::<f32>::load(
                config.model_config(seed),
                split.normal_classes.clone(),
                &path,
                Some(hash),
            )?;
            model.score_matrix(&split.test.images)
        }),
        Method::PcaLoglik => {
            let rel = manifest.pca_checkpoint.as_deref().ok_or_else(|| {
                Error::checkpoint(
                    "run has no PCA checkpoint; retrain with pca-loglik included",
                )
            })?;
            let model = PcaModel::load(&out_path(config, rel), Some(hash))?;
            let errors = model.score(&split.test.images.to_f64())?;
            Ok(vec![ScoreMatrix::from_errors(&errors)?])
        }
    }
}
