//! Run manifest: the durable record tying a config hash to checkpoints,
//! seeds, permutations, metric files, and timings.

use crate::config::ExperimentConfig;
use clvae::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub train_used: usize,
    pub test_size: usize,
    pub test_anomalies: usize,
    pub normal_classes: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberRecord {
    pub index: usize,
    pub seed: u64,
    /// Class-to-center assignment: entry c is the center id of class c.
    pub permutation: Vec<usize>,
    /// Checkpoint kind ("clvae", "vae", "cnn") to path relative to the run
    /// directory.
    pub checkpoints: BTreeMap<String, String>,
    pub train_ms: u64,
    /// Final epoch's total loss per trained model kind.
    pub final_loss: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset: DatasetCounts,
    pub members: Vec<MemberRecord>,
    /// Path of the PCA checkpoint, when the pca-loglik method was trained.
    pub pca_checkpoint: Option<String>,
    /// Metric name to file path, filled by evaluation.
    pub metrics: BTreeMap<String, String>,
    pub train_ms_total: u64,
}

impl RunManifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    /// Every file the manifest references, relative to the run directory.
    pub fn referenced_files(&self) -> Vec<&str> {
        let mut files: Vec<&str> = Vec::new();
        for m in &self.members {
            files.extend(m.checkpoints.values().map(String::as_str));
        }
        if let Some(p) = &self.pca_checkpoint {
            files.push(p);
        }
        files.extend(self.metrics.values().map(String::as_str));
        files
    }

    /// Write to `dir`, refusing to record files that do not exist.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for rel in self.referenced_files() {
            let p = dir.join(rel);
            if !p.is_file() {
                return Err(Error::checkpoint(format!(
                    "manifest references missing file {}",
                    p.display()
                )));
            }
        }
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("manifest encoding: {e}")))?;
        std::fs::write(Self::path_in(dir), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        let path = Self::path_in(dir);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::dataset(
                path.display().to_string(),
                format!("cannot read manifest (run `clvae train` first): {e}"),
            )
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("manifest parse error: {e}")))
    }

    /// The recorded config hash as raw bytes, for checkpoint verification.
    pub fn config_hash_bytes(&self) -> Result<[u8; 32]> {
        let hex = self.config_hash.as_bytes();
        if hex.len() != 64 {
            return Err(Error::checkpoint("manifest config hash is not 64 hex chars"));
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            let pair = std::str::from_utf8(&hex[2 * i..2 * i + 2])
                .ok()
                .and_then(|s| u8::from_str_radix(s, 16).ok())
                .ok_or_else(|| Error::checkpoint("manifest config hash is not hex"))?;
            *byte = pair;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn sample(dir: &Path) -> RunManifest {
        let config = ExperimentConfig::load(None, &Overrides::default()).unwrap();
        let hash = config.hash_hex();
        std::fs::create_dir_all(dir.join("checkpoints")).unwrap();
        std::fs::write(dir.join("checkpoints/clvae-0.clvc"), b"x").unwrap();
        RunManifest {
            config,
            config_hash: hash,
            dataset: DatasetCounts {
                train_used: 10,
                test_size: 4,
                test_anomalies: 2,
                normal_classes: vec![1, 2],
            },
            members: vec![MemberRecord {
                index: 0,
                seed: 7,
                permutation: vec![1, 0],
                checkpoints: [("clvae".to_string(), "checkpoints/clvae-0.clvc".to_string())]
                    .into_iter()
                    .collect(),
                train_ms: 12,
                final_loss: [("clvae".to_string(), 0.5)].into_iter().collect(),
            }],
            pca_checkpoint: None,
            metrics: BTreeMap::new(),
            train_ms_total: 12,
        }
    }

    #[test]
    fn roundtrip_preserves_content() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample(dir.path());
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back.config_hash, m.config_hash);
        assert_eq!(back.members[0].permutation, vec![1, 0]);
        assert_eq!(back.dataset.test_anomalies, 2);
    }

    #[test]
    fn refuses_missing_referenced_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = sample(dir.path());
        m.members[0]
            .checkpoints
            .insert("vae".to_string(), "checkpoints/vae-0.clvc".to_string());
        assert!(m.save(dir.path()).is_err());
    }

    #[test]
    fn load_without_manifest_is_a_dataset_error() {
        let dir = tempfile::tempdir().unwrap();
        match RunManifest::load(dir.path()) {
            Err(Error::Dataset { .. }) => {}
            other => panic!("expected dataset error, got {other:?}"),
        }
    }
}
