//! Per-minibatch KL weights.
//!
//! The weights `lambda_i` run over one (pseudo-rescaled) epoch of `M`
//! minibatches and sum to one. The dataset length `L0` is rescaled to
//! `L* = 100 * L0^(pi / gamma)` so that the warm-up window is comparable
//! across dataset sizes. After the window the weight either holds at its
//! final value or restarts, see [`AfterWarmup`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// `1 / M` for every minibatch.
    Uniform,
    /// Descending, `2^(M-i) / (2^M - 1)`.
    Blundell,
    /// Ascending, `2^i / (2^(M+1) - 2)`.
    BlobAscending,
    /// Ascending as literally printed, `2^i / (2^M - 1)`; sums to about 2.
    BlobAscendingLiteral,
}

impl KlMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(KlMode::Uniform),
            "blundell" => Ok(KlMode::Blundell),
            "blob_ascending" => Ok(KlMode::BlobAscending),
            "blob_ascending_literal" => Ok(KlMode::BlobAscendingLiteral),
            other => Err(Error::Config(format!("unknown kl schedule mode `{other}`"))),
        }
    }
}

pub const DEFAULT_GAMMA: f64 = 8.0;

/// What the weight does once the warm-up epoch is over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfterWarmup {
    /// Stay at the final weight.
    Hold,
    /// Restart the schedule every pseudo-epoch.
    #[default]
    Cycle,
}

impl AfterWarmup {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hold" => Ok(AfterWarmup::Hold),
            "cycle" => Ok(AfterWarmup::Cycle),
            other => Err(Error::Config(format!(
                "unknown after-warmup policy `{other}`"
            ))),
        }
    }
}

/// The user-facing schedule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub mode: KlMode,
    pub gamma: f64,
    pub after_warmup: AfterWarmup,
    /// Apply the pseudo-rescaling of the dataset length.
    pub rescale: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            mode: KlMode::BlobAscending,
            gamma: DEFAULT_GAMMA,
            after_warmup: AfterWarmup::Cycle,
            rescale: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlSchedule {
    /// Minibatches in one pseudo-rescaled epoch.
    pub n_minibatches: usize,
    /// `L*`, the rescaled dataset length.
    pub rescaled_len: usize,
    pub mode: KlMode,
    pub gamma: f64,
    #[serde(default)]
    pub after_warmup: AfterWarmup,
}

/// `floor(100 * L0^(pi / gamma))`.
pub fn pseudo_rescaled_len(dataset_len: usize, gamma: f64) -> usize {
    (100.0 * (dataset_len as f64).powf(std::f64::consts::PI / gamma)).floor() as usize
}

impl KlSchedule {
    /// Schedule for a dataset of `dataset_len` examples. With `rescale`
    /// off, the warm-up is one true epoch.
    pub fn new(
        dataset_len: usize,
        batch_size: usize,
        mode: KlMode,
        gamma: f64,
        rescale: bool,
    ) -> Result<Self> {
        if dataset_len == 0 || batch_size == 0 {
            return Err(Error::InvalidArgument(
                "dataset length and batch size must be positive".into(),
            ));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let rescaled_len = if rescale {
            pseudo_rescaled_len(dataset_len, gamma).max(1)
        } else {
            dataset_len
        };
        Ok(KlSchedule {
            n_minibatches: rescaled_len.div_ceil(batch_size),
            rescaled_len,
            mode,
            gamma,
            after_warmup: AfterWarmup::Cycle,
        })
    }

    /// A schedule with exactly `n_minibatches` steps per warm-up epoch.
    pub fn with_minibatches(n_minibatches: usize, mode: KlMode) -> Result<Self> {
        if n_minibatches == 0 {
            return Err(Error::InvalidArgument("need at least one minibatch".into()));
        }
        Ok(KlSchedule {
            n_minibatches,
            rescaled_len: n_minibatches,
            mode,
            gamma: DEFAULT_GAMMA,
            after_warmup: AfterWarmup::Cycle,
        })
    }

    /// Weight of minibatch `i` (1-based) within the warm-up epoch.
    pub fn weight(&self, i: usize) -> f64 {
        let m = self.n_minibatches as f64;
        let i = i.clamp(1, self.n_minibatches) as f64;
        // 2^-M underflows to 0 harmlessly for large M
        let norm = 1.0 - (-m).exp2();
        match self.mode {
            KlMode::Uniform => 1.0 / m,
            KlMode::Blundell => (-i).exp2() / norm,
            KlMode::BlobAscending => (i - m - 1.0).exp2() / norm,
            KlMode::BlobAscendingLiteral => (i - m).exp2() / norm,
        }
    }

    pub fn after_warmup(mut self, policy: AfterWarmup) -> Self {
        self.after_warmup = policy;
        self
    }

    /// KL weight at training step `step` (1-based).
    pub fn kl_weight_at(&self, step: usize) -> f64 {
        let i = match self.after_warmup {
            AfterWarmup::Hold => step.min(self.n_minibatches),
            AfterWarmup::Cycle => (step.max(1) - 1) % self.n_minibatches + 1,
        };
        self.weight(i)
    }
}
