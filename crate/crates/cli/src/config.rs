use std::path::{Path, PathBuf};

use chartseal::detect::DetectionConfig;
use chartseal::inn::{InnConfig, MapPattern};
use chartseal::intent::HttpBackendConfig;
use chartseal::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Settings shared by every subcommand. Precedence: command-line flags,
/// then the config file, then these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub model_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub map_pattern: MapPattern,
    pub detection: DetectionConfig,
    pub backend: HttpBackendConfig,
    /// Architecture for newly trained models.
    pub model: InnConfig,
    pub train: TrainConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            model_path: PathBuf::from("model.vzmk"),
            output_dir: PathBuf::from("."),
            seed: 0,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            map_pattern: MapPattern::default(),
            detection: DetectionConfig::default(),
            backend: HttpBackendConfig::default(),
            model: InnConfig::toy(),
            train: TrainConfig::toy(),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub model_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
    pub jobs: Option<usize>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>, flags: &Overrides) -> chartseal::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| chartseal::Error::Argument(format!("reading config {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| chartseal::Error::Parse(format!("config {}: {e}", p.display())))?
            }
            None => CliConfig::default(),
        };
        if let Some(v) = &flags.model_path {
            cfg.model_path = v.clone();
        }
        if let Some(v) = &flags.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
            cfg.train.seed = v;
        }
        if let Some(v) = flags.tau {
            cfg.detection.tau = v;
        }
        if let Some(v) = flags.alpha {
            cfg.train.alpha = v;
        }
        if let Some(v) = flags.beta {
            cfg.train.beta = v;
        }
        if let Some(v) = &flags.endpoint {
            cfg.backend.endpoint = v.clone();
        }
        if let Some(v) = flags.timeout_secs {
            cfg.backend.timeout_secs = v;
        }
        if let Some(v) = flags.jobs {
            cfg.jobs = v;
            cfg.backend.max_in_flight = v;
        }
        cfg.jobs = cfg.jobs.max(1);
        cfg.detection.validate()?;
        Ok(cfg)
    }
}
