use serde::{Deserialize, Serialize};

use super::TrialRecord;

fn default_startup_trials() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedianPruner {
    #[serde(default = "default_startup_trials")]
    pub n_startup_trials: usize,
    #[serde(default)]
    pub n_warmup_steps: usize,
}

impl Default for MedianPruner {
    fn default() -> Self {
        Self {
            n_startup_trials: default_startup_trials(),
            n_warmup_steps: 0,
        }
    }
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Whether `current` should stop at `step` (minimization).
///
/// Prunes only when at least `n_startup_trials` trials in `history` have
/// completed, `step` is past the warmup, and the current value is strictly
/// greater than the median of the completed trials' values at that step.
/// Trials with no value at `step` do not contribute to the median.
pub fn median_prune_decision(current: &TrialRecord, step: usize, history: &[TrialRecord], pruner: &MedianPruner) -> bool {
    let Some(value) = current.value_at(step) else {
        return false;
    };
    let completed: Vec<&TrialRecord> = history
        .iter()
        .filter(|t| t.is_complete() && t.trial_id != current.trial_id)
        .collect();
    if completed.len() < pruner.n_startup_trials || step < pruner.n_warmup_steps {
        return false;
    }
    let at_step: Vec<f64> = completed.iter().filter_map(|t| t.value_at(step)).collect();
    match median_of(&at_step) {
        Some(median) => value > median,
        None => false,
    }
}
