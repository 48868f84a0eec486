//! Experiment configuration: TOML with defaults for every key and strict key checking.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bwo::BwoParams;
use crate::error::{Error, Result};
use crate::model::{dense_stack, LayerSpec, SgdOptions};
use crate::protocol::{FederationConfig, Refiner, ScoreMetric, StopPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedBwo,
    /// Score-only protocol with plain SGD as the local refiner.
    HillClimb,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedBwo => "fedbwo",
            Strategy::HillClimb => "hillclimb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub refiner: Refiner,
    pub score: ScoreMetric,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            refiner: Refiner::SgdThenBwo,
            score: ScoreMetric::Loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopConfig {
    pub patience: usize,
    pub accuracy_threshold: f64,
    pub min_delta: f64,
}

impl Default for StopConfig {
    fn default() -> Self {
        let p = StopPolicy::default();
        Self {
            patience: p.patience,
            accuracy_threshold: p.accuracy_threshold,
            min_delta: p.min_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden layer widths; input and output widths come from the data.
    /// Unset means `[32, 16]` for synthetic data and `[128, 64]` for CIFAR-10.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding `data_batch_1..5.bin` and `test_batch.bin`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cifar_dir: Option<PathBuf>,
    pub samples: usize,
    pub test_samples: usize,
    pub dims: usize,
    pub classes: usize,
    pub separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            cifar_dir: None,
            samples: 2000,
            test_samples: 500,
            dims: 32,
            classes: 4,
            separation: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub num_clients: usize,
    pub fraction: f64,
    pub client_epochs: usize,
    pub batch_size: usize,
    pub global_rounds: usize,
    pub learning_rate: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub epsilon: u64,
    /// Run client updates on a thread pool.
    pub parallel: bool,
    /// Also write `metrics.csv`.
    pub csv: bool,
    pub client: ClientConfig,
    pub bwo: BwoParams,
    pub stop: StopConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            fraction: 1.0,
            client_epochs: 5,
            batch_size: 10,
            global_rounds: 30,
            learning_rate: 0.0025,
            strategy: Strategy::FedBwo,
            seed: 0,
            epsilon: 8,
            parallel: true,
            csv: false,
            client: ClientConfig::default(),
            bwo: BwoParams::default(),
            stop: StopConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn stop_policy(&self) -> StopPolicy {
        StopPolicy {
            patience: self.stop.patience,
            accuracy_threshold: self.stop.accuracy_threshold,
            max_rounds: self.global_rounds,
            min_delta: self.stop.min_delta,
        }
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.model
            .hidden
            .clone()
            .unwrap_or_else(|| match self.data.source {
                DataSource::Synthetic => vec![32, 16],
                DataSource::Cifar10 => vec![128, 64],
            })
    }

    pub fn refiner(&self) -> Refiner {
        match self.strategy {
            Strategy::HillClimb => Refiner::Sgd,
            _ => self.client.refiner,
        }
    }

    /// Protocol settings for a model over `input_dim` features and `classes` outputs.
    pub fn federation(&self, input_dim: usize, classes: usize) -> FederationConfig {
        FederationConfig {
            num_clients: self.num_clients,
            fraction: self.fraction,
            sgd: SgdOptions {
                epochs: self.client_epochs,
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
            },
            refiner: self.refiner(),
            score: self.client.score,
            bwo: self.bwo,
            stop: self.stop_policy(),
            epsilon: self.epsilon,
            seed: self.seed,
            parallel: self.parallel,
            layers: self.layers(input_dim, classes),
        }
    }

    pub fn layers(&self, input_dim: usize, classes: usize) -> Vec<LayerSpec> {
        dense_stack(input_dim, &self.hidden_layers(), classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 1 {
            return Err(Error::config("num_clients", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::config("fraction", "must lie in [0, 1]"));
        }
        if self.client_epochs < 1 {
            return Err(Error::config("client_epochs", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.global_rounds < 1 {
            return Err(Error::config("global_rounds", "must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config(
                "learning_rate",
                "must be a finite value >= 0",
            ));
        }
        if self.hidden_layers().contains(&0) {
            return Err(Error::config(
                "model.hidden",
                "layer widths must be at least 1",
            ));
        }
        self.bwo.validate()?;
        self.stop_policy().validate()?;
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                if d.dims < 1 {
                    return Err(Error::config("data.dims", "must be at least 1"));
                }
                if d.classes < 2 {
                    return Err(Error::config("data.classes", "must be at least 2"));
                }
                if d.samples < d.classes || d.samples < self.num_clients {
                    return Err(Error::config(
                        "data.samples",
                        "must cover every class and every client",
                    ));
                }
                if d.test_samples < 1 {
                    return Err(Error::config("data.test_samples", "must be at least 1"));
                }
                if !d.separation.is_finite() || d.separation < 0.0 {
                    return Err(Error::config(
                        "data.separation",
                        "must be a finite value >= 0",
                    ));
                }
            }
            DataSource::Cifar10 => {
                if d.cifar_dir.is_none() {
                    return Err(Error::config(
                        "data.cifar_dir",
                        "is required when data.source = \"cifar10\"",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses and validates configuration text; absent keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| {
            text[..s.start.min(text.len())].matches('\n').count() + 1
        }),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
