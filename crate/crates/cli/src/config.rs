//! Flat TOML run configuration.
//!
//! Every key is optional; missing keys take the defaults below. The
//! effective config (defaults filled in, flags applied) is written next to
//! each command's outputs as `config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use prototraj::embedding::EmbedderSpec;
use prototraj::text::DatasetFormat;
use prototraj::{AdamConfig, LossConfig, Metric, ModelConfig, SimilarityConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const EFFECTIVE_CONFIG: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    /// `jsonl` or `csv`; inferred from the file extension when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_format: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub out_dir: PathBuf,

    /// `hash` or `cache`.
    pub embedding_source: String,
    /// Hash embedder width; a cache file carries its own.
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,

    pub metric: String,
    pub psi: f64,
    pub gamma: f64,
    pub sparse: bool,

    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub eta: f64,

    pub num_prototypes: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub positive_class: usize,

    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub projection_period: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub kmedoids_max_iter: usize,
    pub kmedoids_cap: usize,
    pub proto_sample: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        Self {
            train_path: None,
            val_path: None,
            test_path: None,
            dataset_format: None,
            num_classes: None,
            model_path: None,
            out_dir: PathBuf::from("out"),
            embedding_source: "hash".into(),
            embedding_dim: 64,
            embedding_seed: 0,
            cache_path: None,
            metric: model.similarity.metric.name().to_string(),
            psi: model.similarity.psi,
            gamma: model.similarity.gamma,
            sparse: model.similarity.sparse,
            alpha: model.loss.alpha,
            beta: model.loss.beta,
            delta: model.loss.delta,
            eta: model.loss.eta,
            num_prototypes: model.num_prototypes,
            hidden_size: model.hidden_size,
            num_layers: model.num_layers,
            dropout: model.dropout,
            positive_class: model.positive_class,
            seed: train.seed,
            epochs: train.epochs,
            batch_size: train.batch_size,
            projection_period: train.projection_period,
            patience: train.patience,
            validation_fraction: train.validation_fraction,
            lr: train.adam.lr,
            beta1: train.adam.beta1,
            beta2: train.adam.beta2,
            epsilon: train.adam.epsilon,
            kmedoids_max_iter: train.kmedoids_max_iter,
            kmedoids_cap: train.kmedoids_cap,
            proto_sample: train.proto_sample,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn write_effective(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(EFFECTIVE_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|e| prototraj::Error::io(&path, e).into())
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let cfg = ModelConfig {
            similarity: SimilarityConfig {
                metric: Metric::by_name(&self.metric)?,
                psi: self.psi,
                gamma: self.gamma,
                sparse: self.sparse,
            },
            loss: LossConfig {
                alpha: self.alpha,
                beta: self.beta,
                delta: self.delta,
                eta: self.eta,
            },
            num_prototypes: self.num_prototypes,
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
            dropout: self.dropout,
            positive_class: self.positive_class,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            projection_period: self.projection_period,
            seed: self.seed,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            kmedoids_max_iter: self.kmedoids_max_iter,
            kmedoids_cap: self.kmedoids_cap,
            proto_sample: self.proto_sample,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn embedder_spec(&self) -> Result<EmbedderSpec, CliError> {
        match self.embedding_source.as_str() {
            "hash" => Ok(EmbedderSpec::hash(self.embedding_dim, self.embedding_seed)),
            "cache" => {
                let path = self.cache_path.clone().ok_or_else(|| {
                    CliError::Config("embedding_source = \"cache\" needs cache_path".into())
                })?;
                // Width comes from the cache file header.
                Ok(EmbedderSpec::cache(path))
            }
            other => Err(prototraj::Error::UnknownStrategy {
                kind: "sentence embedder",
                name: other.to_string(),
                available: prototraj::embedding::registry().names(),
            }
            .into()),
        }
    }

    pub fn dataset_format(&self, path: &Path) -> Result<DatasetFormat, CliError> {
        match &self.dataset_format {
            Some(f) => f.parse().map_err(CliError::from),
            None => Ok(DatasetFormat::from_path(path)),
        }
    }

    pub fn model_file(&self) -> PathBuf {
        self.model_path
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.ptm"))
    }
}

/// Fails with a config error if `path` is unset or missing.
pub fn require_path<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("`{key}` is not set")))?;
    if !p.exists() {
        return Err(CliError::Config(format!("{key} {} does not exist", p.display())));
    }
    Ok(p)
}
