//! Benchmark configuration files.
//!
//! A config is TOML: flat `key = value` pairs grouped under `[train]`,
//! `[schedule]`, `[task]`, `[baselines]`, `[suite]` and `[theorems]`. Every
//! key is optional and falls back to its default; unknown keys are errors.
//! `configs/default.toml` lists every key with its default value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineSpec, Method};
use crate::data::TaskSpec;
use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Inference sample counts; deterministic methods run once regardless.
    pub n_samples: Vec<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            n_samples: vec![0, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremConfig {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub sigma_p: f64,
    pub seed: u64,
    /// Weight draws for the posterior moment check.
    pub moment_samples: usize,
    /// Draws for the flipout correlation check.
    pub flipout_draws: usize,
    pub flipout_batch: usize,
    /// Zero out `B` to exercise the rank-precondition guard.
    pub zero_b: bool,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        TheoremConfig {
            m: 4,
            n: 3,
            r: 2,
            sigma_p: 0.2,
            seed: 0,
            moment_samples: 100_000,
            flipout_draws: 10_000,
            flipout_batch: 64,
            zero_b: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub task: TaskSpec,
    pub baselines: BaselineSpec,
    pub suite: SuiteConfig,
    pub theorems: TheoremConfig,
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.task.validate()?;
        self.baselines.validate()?;
        if !(self.schedule.gamma > 0.0) {
            return Err(Error::Config("schedule.gamma must be positive".into()));
        }
        if self.suite.methods.is_empty()
            || self.suite.seeds.is_empty()
            || self.suite.n_samples.is_empty()
        {
            return Err(Error::Config(
                "suite needs at least one method, seed and sample count".into(),
            ));
        }
        Ok(())
    }

    /// The baseline spec for `method`, carrying this config's schedule.
    pub fn spec_for(&self, method: Method) -> BaselineSpec {
        BaselineSpec {
            kind: method,
            schedule: self.schedule,
            ..self.baselines.clone()
        }
    }
}
