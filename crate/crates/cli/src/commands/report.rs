//! `clvae report`: condense a finished run (manifest + evaluation summary)
//! into report.json and report.txt. Regenerating from the same inputs is
//! byte-identical; timings come from the recorded files, not the clock.

use crate::config::ExperimentConfig;
use crate::manifest::{DatasetCounts, RunManifest};
use crate::outputs::write_json;
use crate::summary::{EvalSummary, MethodSummary};
use clvae::Result;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Serialize)]
struct MemberBrief {
    index: usize,
    seed: u64,
    permutation: Vec<usize>,
    train_ms: u64,
    final_loss: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Report {
    config_hash: String,
    dataset: DatasetCounts,
    members: Vec<MemberBrief>,
    methods: BTreeMap<String, MethodSummary>,
    train_ms_total: u64,
    eval_ms_total: u64,
    config: ExperimentConfig,
}

pub fn run(run_dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::load(run_dir)?;
    let summary = EvalSummary::load(run_dir)?;

    let report = Report {
        config_hash: manifest.config_hash.clone(),
        dataset: manifest.dataset.clone(),
        members: manifest
            .members
            .iter()
            .map(|m| MemberBrief {
                index: m.index,
                seed: m.seed,
                permutation: m.permutation.clone(),
                train_ms: m.train_ms,
                final_loss: m.final_loss.clone(),
            })
            .collect(),
        methods: summary.methods.clone(),
        train_ms_total: manifest.train_ms_total,
        eval_ms_total: summary.eval_ms_total,
        config: manifest.config.clone(),
    };
    write_json(&run_dir.join("report.json"), &report)?;

    let text = render_text(&report);
    std::fs::write(run_dir.join("report.txt"), &text)?;

    manifest
        .metrics
        .insert("report".to_string(), "report.json".to_string());
    manifest
        .metrics
        .insert("report_text".to_string(), "report.txt".to_string());
    manifest.save(run_dir)?;

    print!("{text}");
    Ok(())
}

fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run {}", r.config_hash);
    let _ = writeln!(
        s,
        "dataset {}: {} train / {} test ({} anomalies, class {})",
        r.config.dataset.name,
        r.dataset.train_used,
        r.dataset.test_size,
        r.dataset.test_anomalies,
        r.config.dataset.anomaly_class
    );
    let _ = writeln!(
        s,
        "ensemble of {} (merge {}), latent dim {}, seed {}",
        r.members.len(),
        r.config.ensemble.merge,
        r.config.model.latent_dim,
        r.config.run.seed
    );
    let seeds: Vec<String> = r.members.iter().map(|m| m.seed.to_string()).collect();
    let _ = writeln!(s, "member seeds: {}", seeds.join(", "));
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<16} {:>8}  {:>8}  {:>8}  merge",
        "method", "auc", "auc(k=1)", "members"
    );
    for (tag, m) in &r.methods {
        let k1 = m
            .curve
            .first()
            .map(|p| format!("{:.4}", p.mean_auc))
            .unwrap_or_else(|| "-".to_string());
        let _ = writeln!(
            s,
            "{tag:<16} {:>8.4}  {k1:>8}  {:>8}  {}",
            m.auc, m.members, m.merge
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "training {} ms total, evaluation {} ms total",
        r.train_ms_total, r.eval_ms_total
    );
    s
}
