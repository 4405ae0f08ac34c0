//! Run configuration: one TOML or JSON document naming the space file and
//! carrying the platform, objective, evaluator and strategy sections.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! space_file = "toy_space.toml"
//! output_dir = "runs/toy"
//!
//! [platform]
//! # PlatformModel fields
//!
//! [objective]
//! latency_target_ms = 0.5
//!
//! [evaluator]
//! kind = "surrogate"
//!
//! [strategy]
//! kind = "scd"
//! max_iters = 200
//! coords = ["channels", "quant"]
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::accuracy::{AccuracyEvaluator, ProxyConfig, ProxyDataset, ProxyEvaluator, SurrogateParams};
use crate::oracle::SchedulePolicy;
use crate::perf::{PlatformModel, ResourceWeights};
use crate::search::edd::EddConfig;
use crate::search::pso::PsoConfig;
use crate::search::scd::ScdConfig;
use crate::search::Objective;
use crate::seed;
use crate::space::{self, SearchSpace};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    Scd(ScdConfig),
    Pso(PsoConfig),
    Edd(EddConfig),
}

impl StrategyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::Scd(_) => "scd",
            StrategyConfig::Pso(_) => "pso",
            StrategyConfig::Edd(_) => "edd",
        }
    }

    /// Copies the run seed into the strategy.
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            StrategyConfig::Scd(c) => c.seed = seed,
            StrategyConfig::Pso(c) => c.seed = seed,
            StrategyConfig::Edd(c) => c.seed = seed,
        }
    }

    /// Restricts a discrete search to the given bundles.
    pub fn restrict_bundles(&mut self, ids: Vec<String>) {
        match self {
            StrategyConfig::Scd(c) => c.bundles = Some(ids),
            StrategyConfig::Pso(c) => c.bundles = Some(ids),
            StrategyConfig::Edd(_) => {}
        }
    }
}

/// Synthetic Gaussian-blob dataset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub rows_per_class: usize,
    pub dims: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxySection {
    /// CSV with feature columns followed by a `label` column.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub train: ProxyConfig,
}

fn default_val_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    Surrogate(SurrogateParams),
    Proxy(ProxySection),
}

/// Bundle pre-selection before a discrete search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "default_trials")]
    pub trials_per_bundle: usize,
    #[serde(default)]
    pub weights: ResourceWeights,
    /// Restrict SCD/PSO to the Pareto-front bundles.
    #[serde(default)]
    pub restrict_to_front: bool,
}

fn default_trials() -> usize {
    8
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            trials_per_bundle: default_trials(),
            weights: ResourceWeights::default(),
            restrict_to_front: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub space_file: PathBuf,
    pub output_dir: PathBuf,
    pub platform: PlatformModel,
    pub objective: Objective,
    pub evaluator: EvaluatorConfig,
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    /// Tiling policy for the cycle oracle; derived from the platform when absent.
    #[serde(default)]
    pub oracle: Option<SchedulePolicy>,
}

impl RunConfig {
    pub fn from_str(text: &str, json: bool) -> Result<Self, ConfigError> {
        let cfg: RunConfig = if json {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Checks every section that does not need the space file.
    pub fn check(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.platform.check().map_err(|e| inv(&e))?;
        self.objective.check().map_err(|e| inv(&e))?;
        match &self.strategy {
            StrategyConfig::Scd(c) => c.check().map_err(|e| inv(&e))?,
            StrategyConfig::Pso(c) => c.check().map_err(|e| inv(&e))?,
            StrategyConfig::Edd(c) => {
                c.check().map_err(|e| inv(&e))?;
                if !matches!(self.evaluator, EvaluatorConfig::Surrogate(_)) {
                    return Err(ConfigError::Invalid(
                        "the edd strategy needs the differentiable surrogate evaluator".into(),
                    ));
                }
            }
        }
        match &self.evaluator {
            EvaluatorConfig::Surrogate(p) => p.check().map_err(|e| inv(&e))?,
            EvaluatorConfig::Proxy(p) => {
                p.train.check().map_err(|e| inv(&e))?;
                if p.dataset.is_some() == p.synthetic.is_some() {
                    return Err(ConfigError::Invalid(
                        "proxy evaluator needs exactly one of `dataset` or `synthetic`".into(),
                    ));
                }
                if !(p.val_fraction > 0.0 && p.val_fraction < 1.0) {
                    return Err(ConfigError::Invalid("val_fraction must be in (0, 1)".into()));
                }
            }
        }
        if let Some(sel) = &self.selection {
            if sel.trials_per_bundle == 0 {
                return Err(ConfigError::Invalid("trials_per_bundle must be >= 1".into()));
            }
            let w = [sel.weights.dsp, sel.weights.bram, sel.weights.lut];
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(ConfigError::Invalid("selection weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// A parsed, validated config together with the files it references.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub space: SearchSpace,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read(path: &Path) -> Result<Vec<u8>, ConfigError> {
    std::fs::read(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

impl LoadedConfig {
    /// Parses `bytes` as a config located in `base_dir`, loads the space
    /// file and checks everything against it.
    pub fn from_bytes(bytes: &[u8], json: bool, base_dir: &Path) -> Result<Self, ConfigError> {
        let text = std::str::from_utf8(bytes).map_err(|e| ConfigError::Parse(format!("config is not UTF-8: {e}")))?;
        let config = RunConfig::from_str(text, json)?;
        config.check()?;
        let space_path = base_dir.join(&config.space_file);
        let space_bytes = read(&space_path)?;
        let space_text = String::from_utf8(space_bytes)
            .map_err(|e| ConfigError::Parse(format!("{}: not UTF-8: {e}", space_path.display())))?;
        let space = space::parse_space_str(&space_text, is_json(&space_path))
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", space_path.display())))?;
        let loaded = LoadedConfig {
            config,
            space,
            base_dir: base_dir.to_path_buf(),
            config_hash: seed::sha256_hex(bytes),
        };
        loaded.check_against_space()?;
        Ok(loaded)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = read(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_bytes(&bytes, is_json(path), &base)
    }

    fn check_against_space(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let cfg = &self.config;
        cfg.platform.check_for(&self.space).map_err(|e| inv(&e))?;
        if let EvaluatorConfig::Surrogate(p) = &cfg.evaluator {
            p.check_for(&self.space).map_err(|e| inv(&e))?;
        }
        let bundles = match &cfg.strategy {
            StrategyConfig::Scd(c) => c.bundles.clone(),
            StrategyConfig::Pso(c) => c.bundles.clone(),
            StrategyConfig::Edd(c) => {
                crate::search::edd::RelaxedState::init(&self.space, c).map_err(|e| inv(&e))?;
                None
            }
        };
        if let Some(id) = bundles.iter().flatten().find(|id| self.space.bundle(id).is_none()) {
            return Err(ConfigError::Invalid(format!("strategy names unknown bundle `{id}`")));
        }
        if let EvaluatorConfig::Proxy(p) = &cfg.evaluator {
            if let Some(ds) = &p.dataset {
                let path = self.base_dir.join(ds);
                if !path.is_file() {
                    return Err(ConfigError::Invalid(format!("dataset {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    /// The configured output directory, resolved against the config location.
    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.output_dir)
    }

    /// The strategy section with the run seed applied.
    pub fn strategy(&self) -> StrategyConfig {
        let mut s = self.config.strategy.clone();
        s.set_seed(self.config.seed);
        s
    }

    pub fn schedule_policy(&self) -> SchedulePolicy {
        self.config
            .oracle
            .unwrap_or_else(|| SchedulePolicy::from_platform(&self.config.platform))
    }

    /// Builds the configured accuracy evaluator.
    pub fn evaluator(&self) -> Result<Box<dyn AccuracyEvaluator>, ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        match &self.config.evaluator {
            EvaluatorConfig::Surrogate(p) => Ok(Box::new(p.clone())),
            EvaluatorConfig::Proxy(p) => {
                let seed = self.config.seed;
                let data = match (&p.dataset, &p.synthetic) {
                    (Some(path), _) => {
                        let full = self.base_dir.join(path);
                        let text = std::fs::read_to_string(&full)
                            .map_err(|source| ConfigError::Io { path: full.clone(), source })?;
                        ProxyDataset::from_csv_str(&text, p.val_fraction, seed).map_err(|e| inv(&e))?
                    }
                    (None, Some(s)) => ProxyDataset::synthetic_blobs(seed, s.rows_per_class, s.dims, s.classes)
                        .map_err(|e| inv(&e))?,
                    (None, None) => return Err(ConfigError::Invalid("proxy evaluator has no dataset".into())),
                };
                Ok(Box::new(ProxyEvaluator::new(data, p.train.clone(), seed).map_err(|e| inv(&e))?))
            }
        }
    }
}
