//! Experiment configuration: one JSON document covering the generator,
//! the simulator and the agent list. Missing fields take module defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::Taxonomy;
use crate::env::{EnvError, EnvParams};
use crate::metrics::MetricsOptions;
use crate::sim::{AgentKind, SimConfig, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seed of the task list; defaults to `seed`. Every agent of an
    /// experiment must share it.
    pub task_seed: Option<u64>,
    pub env: EnvParams,
    pub agents: Vec<AgentKind>,
    pub task_count: usize,
    pub sim: SimConfig,
    pub metrics: MetricsOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task_seed: None,
            env: EnvParams::default(),
            agents: AgentKind::ALL.to_vec(),
            task_count: 200,
            sim: SimConfig::default(),
            metrics: MetricsOptions::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Env(#[from] EnvError),
    #[error("invalid config: {0}")]
    Sim(#[from] SimError),
    #[error("invalid config: field '{field}': {message}")]
    Field { field: &'static str, message: String },
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// File contents if a path is given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn task_seed(&self) -> u64 {
        self.task_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate()?;
        self.sim.validate(&Taxonomy::standard())?;
        if !(0.0..1.0).contains(&self.metrics.warmup_fraction) {
            return Err(ConfigError::Field {
                field: "metrics.warmup_fraction",
                message: format!("{} not in [0, 1)", self.metrics.warmup_fraction),
            });
        }
        let mut seen = self.agents.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.agents.len() {
            return Err(ConfigError::Field {
                field: "agents",
                message: "agents must be distinct".into(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
