//! Evaluation summary written by `clvae evaluate` and consumed by
//! `clvae report`.

use crate::manifest::DatasetCounts;
use clvae::scoring::CurvePoint;
use clvae::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const SUMMARY_REL: &str = "metrics/summary.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub mean_auc: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_subsets: usize,
}

impl From<&CurvePoint> for CurveRow {
    fn from(p: &CurvePoint) -> CurveRow {
        CurveRow {
            k: p.k,
            mean_auc: p.mean_auc,
            lo: p.lo,
            hi: p.hi,
            n_subsets: p.n_subsets,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub auc: f64,
    /// Merge rule actually applied (error-style methods always average).
    pub merge: String,
    pub members: usize,
    pub curve: Vec<CurveRow>,
    pub eval_ms: u64,
    /// Artifact name -> path relative to the run directory.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub dataset: DatasetCounts,
    pub member_seeds: Vec<u64>,
    pub methods: BTreeMap<String, MethodSummary>,
    pub eval_ms_total: u64,
}

impl EvalSummary {
    pub fn load(run_dir: &Path) -> Result<EvalSummary> {
        let path = run_dir.join(SUMMARY_REL);
        let bytes = std::fs::read(&path).map_err(|e| {
            Error::dataset(
                path.display().to_string(),
                format!("{e}; run `clvae evaluate` first"),
            )
        })?;
        serde_json::from_slice(&bytes).map_err(|e| {
            Error::dataset(path.display().to_string(), format!("malformed summary: {e}"))
        })
    }
}
