//! Hyperparameter search over hidden size, batch size, and learning rate.
//!
//! Suggestions come from a univariate Tree-structured Parzen Estimator (or a
//! plain random sampler for comparison); trials may be cut short by a median
//! pruner. Every trial is appended to an optional JSONL journal so a study can
//! be resumed.

mod pruner;
mod study;
mod tpe;
mod tune;

pub use pruner::{median_of, median_prune_decision, MedianPruner};
pub use study::{read_journal, Journal, Objective, Study, TrialContext, TrialError};
pub use tpe::{random_suggest, tpe_suggest, trial_rng, ParzenEstimator, TpeConfig};
pub use tune::{run_study, TuneOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("empty search range for {param}: [{lo}, {hi}]")]
    EmptyRange { param: &'static str, lo: f64, hi: f64 },
    #[error("no trial completed ({pruned} pruned, {failed} failed)")]
    NoCompletedTrial { pruned: usize, failed: usize },
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("journal error: {0}")]
    Journal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mlp(#[from] crate::mlp::MlpError),
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: usize,
    pub hi: usize,
}

/// Inclusive range sampled uniformly in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub hidden_size: IntRange,
    pub batch_size: IntRange,
    pub learning_rate: LogRange,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), HpoError> {
        for (param, r) in [("hidden_size", self.hidden_size), ("batch_size", self.batch_size)] {
            if r.lo > r.hi {
                return Err(HpoError::EmptyRange {
                    param,
                    lo: r.lo as f64,
                    hi: r.hi as f64,
                });
            }
        }
        let lr = self.learning_rate;
        if !(lr.lo > 0.0 && lr.lo <= lr.hi && lr.hi.is_finite()) {
            return Err(HpoError::EmptyRange {
                param: "learning_rate",
                lo: lr.lo,
                hi: lr.hi,
            });
        }
        Ok(())
    }
}

/// Search ranges for a projector mapping `input_dim` to `output_dim`.
///
/// With `m = min(dims)` and `M = max(dims)` the hidden size ranges over
/// `[m, min(2m, M)]`; batch size over `[16, 128]`; learning rate over
/// `[1e-6, 1]` on a log scale.
pub fn derive_search_space(input_dim: usize, output_dim: usize) -> SearchSpace {
    let m = input_dim.min(output_dim);
    let big = input_dim.max(output_dim);
    SearchSpace {
        hidden_size: IntRange {
            lo: m,
            hi: (2 * m).min(big),
        },
        batch_size: IntRange { lo: 16, hi: 128 },
        learning_rate: LogRange { lo: 1e-6, hi: 1.0 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub hidden_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Complete,
    Pruned,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub params: HyperParams,
    /// `(step, value)` pairs in report order; the step is the epoch number.
    pub intermediate_values: Vec<(usize, f64)>,
    pub status: TrialStatus,
    pub final_value: Option<f64>,
}

impl TrialRecord {
    pub fn value_at(&self, step: usize) -> Option<f64> {
        self.intermediate_values
            .iter()
            .rev()
            .find(|(s, _)| *s == step)
            .map(|(_, v)| *v)
    }

    pub fn is_complete(&self) -> bool {
        self.status == TrialStatus::Complete && self.final_value.is_some_and(f64::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerConfig {
    Tpe(TpeConfig),
    Random {
        #[serde(default)]
        seed: u64,
    },
}

impl SamplerConfig {
    pub fn seed(&self) -> u64 {
        match self {
            SamplerConfig::Tpe(c) => c.seed,
            SamplerConfig::Random { seed } => *seed,
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::Tpe(TpeConfig::default())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrunerConfig {
    #[default]
    None,
    Median(MedianPruner),
}

/// Quantity a study minimizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    ValidationMse,
}

fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub pruner: PrunerConfig,
    #[serde(default)]
    pub objective: ObjectiveKind,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_trials: default_trials(),
            sampler: SamplerConfig::default(),
            pruner: PrunerConfig::None,
            objective: ObjectiveKind::ValidationMse,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), HpoError> {
        if self.n_trials == 0 {
            return Err(HpoError::Config("n_trials must be at least 1".into()));
        }
        if let SamplerConfig::Tpe(t) = &self.sampler {
            t.validate()?;
        }
        Ok(())
    }
}
