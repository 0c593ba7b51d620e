//! `clvae export-latent`: dump every member's posterior means for the train
//! and test splits as CSV, for plotting.

use super::{build_centers, load_split, member_checkpoint, metrics_rel, run_parallel};
use crate::manifest::RunManifest;
use crate::outputs::write_csv;
use clvae::model::{Prior, VaeModel};
use clvae::Result;
use std::path::Path;

pub fn run(run_dir: &Path, workers: Option<usize>) -> Result<()> {
    let mut manifest = RunManifest::load(run_dir)?;
    let config = manifest.config.clone();
    let hash = manifest.config_hash_bytes()?;
    let split = load_split(&config)?;
    let centers = build_centers(&config, split.normal_classes.len())?;
    let workers = workers.unwrap_or(config.run.workers).max(1);
    let d = config.model.latent_dim;

    let mut header: Vec<String> = ["id", "split", "label", "anomaly"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|j| format!("z{j}")));
    header.push("center_id".to_string());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();

    let n_members = manifest.members.len();
    let rels = run_parallel(n_members, workers, |i| {
        let seed = config.member_seed(i);
        let mut member_centers = centers.clone();
        member_centers.permute_assignment(seed);
        let path = member_checkpoint(&config, &manifest, "clvae", i)?;
        let mut model = VaeModel::<f32>::load(
            config.model_config(seed),
            Prior::Conditional(member_centers.clone()),
            &path,
            Some(&hash),
        )?;
        let (mu_train, _) = model.encode(&split.train.images)?;
        let (mu_test, _) = model.encode(&split.test.images)?;

        let mut rows = Vec::with_capacity(mu_train.rows() + mu_test.rows());
        let mut id = 0usize;
        for (name, mu, labels, flags) in [
            ("train", &mu_train, &split.train.labels, None),
            (
                "test",
                &mu_test,
                &split.test.labels,
                Some(&split.test_anomaly_flags),
            ),
        ] {
            for r in 0..mu.rows() {
                let label = labels[r];
                let anomaly = flags.map_or(false, |f| f[r]);
                let mut row = vec![
                    id.to_string(),
                    name.to_string(),
                    label.to_string(),
                    (anomaly as u8).to_string(),
                ];
                row.extend(mu.row(r).iter().map(|z| z.to_string()));
                row.push(if anomaly {
                    String::new()
                } else {
                    member_centers
                        .center_id_for_class(split.class_index(label)?)
                        .to_string()
                });
                rows.push(row);
                id += 1;
            }
        }
        let rel = metrics_rel(&format!("latent-{i}.csv"));
        write_csv(&run_dir.join(&rel), &header, rows)?;
        Ok(rel)
    })?;

    for (i, rel) in rels.iter().enumerate() {
        manifest.metrics.insert(format!("latent.{i}"), rel.clone());
        println!("member {i}: {}", run_dir.join(rel).display());
    }
    manifest.save(run_dir)?;
    Ok(())
}
