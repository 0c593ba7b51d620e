//! Experiment configuration: one declarative TOML file, overridable by
//! flags, hashed for checkpoint compatibility checks.

use clvae::model::{ConvSpec, ModelConfig};
use clvae::scoring::MergeMethod;
use clvae::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};

/// The five evaluation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    ClvaeLatent,
    ClvaeMse,
    VaeMse,
    CnnConfidence,
    PcaLoglik,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ClvaeLatent,
        Method::ClvaeMse,
        Method::VaeMse,
        Method::CnnConfidence,
        Method::PcaLoglik,
    ];

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "clvae-latent" => Ok(Method::ClvaeLatent),
            "clvae-mse" => Ok(Method::ClvaeMse),
            "vae-mse" => Ok(Method::VaeMse),
            "cnn-confidence" => Ok(Method::CnnConfidence),
            "pca-loglik" => Ok(Method::PcaLoglik),
            other => Err(Error::config(format!(
                "unknown method {other:?} (expected clvae-latent, clvae-mse, vae-mse, cnn-confidence, or pca-loglik)"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Method::ClvaeLatent => "clvae-latent",
            Method::ClvaeMse => "clvae-mse",
            Method::VaeMse => "vae-mse",
            Method::CnnConfidence => "cnn-confidence",
            Method::PcaLoglik => "pca-loglik",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub name: String,
    /// Directory holding the four IDX files. Empty means
    /// `$CLVAE_DATA_DIR/<name>` if the variable is set, else `data/<name>`.
    pub dir: String,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub anomaly_class: u8,
    /// Training images kept after the anomaly class is removed; 0 = all.
    pub train_subsample: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            name: "mnist".into(),
            dir: String::new(),
            train_images: "train-images-idx3-ubyte.gz".into(),
            train_labels: "train-labels-idx1-ubyte.gz".into(),
            test_images: "t10k-images-idx3-ubyte.gz".into(),
            test_labels: "t10k-labels-idx1-ubyte.gz".into(),
            anomaly_class: 0,
            train_subsample: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for ConvLayer {
    fn default() -> Self {
        ConvLayer { filters: 32, kernel: 3, stride: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub input_h: usize,
    pub input_w: usize,
    pub input_channels: usize,
    /// Empty means the stock stack: conv(32,3,s2) conv(64,3,s2), with a
    /// leading conv(16,3,s1) when the dataset name starts with "fashion".
    pub conv_layers: Vec<ConvLayer>,
    pub bottleneck: usize,
    pub latent_dim: usize,
    pub alpha: f64,
    pub prior_variance: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            input_h: 28,
            input_w: 28,
            input_channels: 1,
            conv_layers: Vec::new(),
            bottleneck: 16,
            latent_dim: 2,
            alpha: 1.0 / 6.0,
            prior_variance: 1.0,
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub size: usize,
    /// Merge for likelihood-kind methods (latent divergence, CNN
    /// confidence): arithmetic, geometric, max, or min. Error-kind methods
    /// always average.
    pub merge: String,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { size: 5, merge: "arithmetic".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    /// "fitted": per-class Gaussians fitted to training latents (default);
    /// "fixed": the unit-variance prior density at each center.
    pub latent: String,
    pub pca_components: usize,
    /// Exemplars per PNG grid.
    pub exemplars: usize,
}

impl Default for ScoringSection {
    fn default() -> Self {
        ScoringSection { latent: "fitted".into(), pca_components: 32, exemplars: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub methods: Vec<String>,
    pub out: String,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 7,
            methods: Method::ALL.iter().map(|m| m.tag().to_string()).collect(),
            out: "runs/latest".into(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub ensemble: EnsembleSection,
    pub scoring: ScoringSection,
    pub run: RunSection,
}

/// Flag-level overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ensemble: Option<usize>,
    pub methods: Option<String>,
    pub out: Option<String>,
    pub workers: Option<usize>,
    pub full_data: bool,
}

impl ExperimentConfig {
    /// Load from TOML (or start from defaults when `path` is None), apply
    /// overrides, resolve derived fields, and validate.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
        let mut config: ExperimentConfig = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::dataset(p.display().to_string(), format!("cannot read config: {e}"))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::config(format!("config parse error: {e}")))?
            }
        };
        if let Some(seed) = overrides.seed {
            config.run.seed = seed;
        }
        if let Some(size) = overrides.ensemble {
            config.ensemble.size = size;
        }
        if let Some(methods) = &overrides.methods {
            config.run.methods = methods
                .split(',')
                .map(|m| m.trim().to_string())
                .filter(|m| !m.is_empty())
                .collect();
        }
        if let Some(out) = &overrides.out {
            config.run.out = out.clone();
        }
        if let Some(workers) = overrides.workers {
            config.run.workers = workers;
        }
        if overrides.full_data {
            config.dataset.train_subsample = 0;
        }
        config.resolve()?;
        Ok(config)
    }

    fn resolve(&mut self) -> Result<()> {
        if self.dataset.dir.is_empty() {
            self.dataset.dir = match std::env::var("CLVAE_DATA_DIR") {
                Ok(root) if !root.is_empty() => {
                    format!("{root}/{}", self.dataset.name)
                }
                _ => format!("data/{}", self.dataset.name),
            };
        }
        if self.model.conv_layers.is_empty() {
            let mut layers = vec![
                ConvLayer { filters: 32, kernel: 3, stride: 2 },
                ConvLayer { filters: 64, kernel: 3, stride: 2 },
            ];
            if self.dataset.name.starts_with("fashion") {
                layers.insert(0, ConvLayer { filters: 16, kernel: 3, stride: 1 });
            }
            self.model.conv_layers = layers;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble.size == 0 {
            return Err(Error::config("ensemble size must be at least 1"));
        }
        MergeMethod::parse(&self.ensemble.merge)?;
        if self.run.methods.is_empty() {
            return Err(Error::config("methods list is empty"));
        }
        self.methods()?;
        if !matches!(self.scoring.latent.as_str(), "fitted" | "fixed") {
            return Err(Error::config(format!(
                "scoring.latent must be \"fitted\" or \"fixed\", got {:?}",
                self.scoring.latent
            )));
        }
        if self.scoring.pca_components == 0 {
            return Err(Error::config("scoring.pca_components must be positive"));
        }
        if self.scoring.exemplars == 0 {
            return Err(Error::config("scoring.exemplars must be positive"));
        }
        if self.run.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        self.model_config(self.run.seed).validate()
    }

    /// Parsed, deduplicated methods in canonical order.
    pub fn methods(&self) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = self
            .run
            .methods
            .iter()
            .map(|m| Method::parse(m))
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn merge_method(&self) -> MergeMethod {
        MergeMethod::parse(&self.ensemble.merge).expect("validated at load")
    }

    /// Core model configuration for one ensemble member.
    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            input_h: self.model.input_h,
            input_w: self.model.input_w,
            input_channels: self.model.input_channels,
            conv_layers: self
                .model
                .conv_layers
                .iter()
                .map(|l| ConvSpec { filters: l.filters, kernel: l.kernel, stride: l.stride })
                .collect(),
            bottleneck: self.model.bottleneck,
            latent_dim: self.model.latent_dim,
            alpha: self.model.alpha,
            prior_variance: self.model.prior_variance,
            epochs: self.model.epochs,
            batch_size: self.model.batch_size,
            learning_rate: self.model.learning_rate,
            seed,
        }
    }

    pub fn member_seed(&self, index: usize) -> u64 {
        self.run.seed.wrapping_add(index as u64)
    }

    pub fn data_path(&self, file: &str) -> PathBuf {
        Path::new(&self.dataset.dir).join(file)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.out)
    }

    /// SHA-256 of the canonical JSON encoding of the resolved config.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hasher.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}
