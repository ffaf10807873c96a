//! Run configuration: one JSON file drives every pipeline command.
//!
//! An empty object expands to the full reference defaults; unknown keys
//! anywhere in the document are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsanError};
use crate::model::ModelConfig;
use crate::objective::LossWeights;
use crate::pretrain::PretrainConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub window_size: usize,
    pub stride: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train_path: PathBuf::from("data/KDDTrain+.txt"),
            test_path: PathBuf::from("data/KDDTest+.txt"),
            window_size: 5,
            stride: 1,
            validation_fraction: 0.2,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: 3,
            lr: 1e-3,
            batch: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossWeights,
    pub threshold: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-3,
            batch: 128,
            max_epochs: 5,
            patience: 2,
            loss: LossWeights::default(),
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Read a config file; a missing `path` of `None` means defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    TsanError::Io(std::io::Error::new(
                        e.kind(),
                        format!("cannot read config {}: {e}", p.display()),
                    ))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| TsanError::config(format!("bad config {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.window_size < 1 || self.data.stride < 1 {
            return Err(TsanError::config(
                "window_size and stride must be >= 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(TsanError::config(format!(
                "validation_fraction {} must be in [0, 1)",
                self.data.validation_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.train.threshold) {
            return Err(TsanError::config(format!(
                "threshold {} must be in [0, 1]",
                self.train.threshold
            )));
        }
        for (name, v) in [
            ("main", self.train.loss.main),
            ("traffic", self.train.loss.traffic),
            ("protocol", self.train.loss.protocol),
            ("consistency", self.train.loss.consistency),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(TsanError::config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        self.model.validate()
    }

    /// Pretraining settings with the effective seed filled in.
    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            lr: self.pretrain.lr,
            batch: self.pretrain.batch,
            seed,
        }
    }

    /// Training settings with the effective seed filled in.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch: self.train.batch,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed,
            loss: self.train.loss,
            threshold: self.train.threshold,
        }
    }
}
