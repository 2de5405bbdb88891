use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{
    median_prune_decision, random_suggest, tpe_suggest, trial_rng, HpoError, HyperParams, PrunerConfig, SamplerConfig,
    SearchSpace, StudyConfig, TrialRecord, TrialStatus,
};

/// Why a trial ended without a value.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialError {
    Pruned,
    Failed(String),
}

/// Handle given to the objective while a trial runs.
pub struct TrialContext<'a> {
    record: TrialRecord,
    history: &'a [TrialRecord],
    pruner: PrunerConfig,
}

impl TrialContext<'_> {
    pub fn trial_id(&self) -> usize {
        self.record.trial_id
    }

    pub fn params(&self) -> HyperParams {
        self.record.params
    }

    /// Records an intermediate value and returns whether the trial should be pruned.
    pub fn report(&mut self, step: usize, value: f64) -> bool {
        self.record.intermediate_values.push((step, value));
        match &self.pruner {
            PrunerConfig::None => false,
            PrunerConfig::Median(p) => median_prune_decision(&self.record, step, self.history, p),
        }
    }
}

pub trait Objective {
    fn evaluate(&mut self, trial: &mut TrialContext<'_>) -> Result<f64, TrialError>;
}

impl<F> Objective for F
where
    F: FnMut(&mut TrialContext<'_>) -> Result<f64, TrialError>,
{
    fn evaluate(&mut self, trial: &mut TrialContext<'_>) -> Result<f64, TrialError> {
        self(trial)
    }
}

/// Append-only JSONL log of finished trials.
#[derive(Debug)]
pub struct Journal {
    file: File,
}

impl Journal {
    /// Opens (creating if needed) a journal and returns the trials already in it.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<TrialRecord>), HpoError> {
        let path = path.as_ref();
        let existing = if path.exists() { read_journal(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((Self { file }, existing))
    }

    pub fn append(&mut self, record: &TrialRecord) -> Result<(), HpoError> {
        let mut line = serde_json::to_vec(record).map_err(|e| HpoError::Journal(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn read_journal(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>, HpoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord =
            serde_json::from_str(&line).map_err(|e| HpoError::Journal(format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// A sequential study: one suggestion, one evaluation, one journal entry per trial.
pub struct Study {
    config: StudyConfig,
    space: SearchSpace,
    trials: Vec<TrialRecord>,
    journal: Option<Journal>,
}

impl Study {
    pub fn new(config: StudyConfig, space: SearchSpace) -> Result<Self, HpoError> {
        config.validate()?;
        space.validate()?;
        Ok(Self {
            config,
            space,
            trials: Vec::new(),
            journal: None,
        })
    }

    /// Attaches a journal, resuming from the trials it already holds.
    pub fn with_journal(mut self, path: impl AsRef<Path>) -> Result<Self, HpoError> {
        let (journal, existing) = Journal::open(path)?;
        for (i, t) in existing.iter().enumerate() {
            if t.trial_id != i {
                return Err(HpoError::Journal(format!(
                    "expected trial {i} at position {i}, found trial {}",
                    t.trial_id
                )));
            }
        }
        self.trials = existing;
        self.journal = Some(journal);
        Ok(self)
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    /// Completed trial with the lowest value; ties go to the lower trial id.
    pub fn best_trial(&self) -> Option<&TrialRecord> {
        self.trials
            .iter()
            .filter(|t| t.is_complete())
            .min_by(|a, b| {
                a.final_value
                    .unwrap()
                    .total_cmp(&b.final_value.unwrap())
                    .then(a.trial_id.cmp(&b.trial_id))
            })
    }

    /// Suggestion for `trial_id` given the trials recorded so far.
    pub fn suggest(&self, trial_id: usize) -> Result<HyperParams, HpoError> {
        let mut rng = trial_rng(self.config.sampler.seed(), trial_id);
        match &self.config.sampler {
            SamplerConfig::Tpe(cfg) => tpe_suggest(&self.trials, &self.space, cfg, &mut rng),
            SamplerConfig::Random { .. } => random_suggest(&self.space, &mut rng),
        }
    }

    /// Runs trials until `n_trials` have been recorded and returns the best one.
    pub fn optimize(&mut self, mut objective: impl Objective) -> Result<&TrialRecord, HpoError> {
        while self.trials.len() < self.config.n_trials {
            let trial_id = self.trials.len();
            let params = self.suggest(trial_id)?;
            let mut ctx = TrialContext {
                record: TrialRecord {
                    trial_id,
                    params,
                    intermediate_values: Vec::new(),
                    status: TrialStatus::Running,
                    final_value: None,
                },
                history: &self.trials,
                pruner: self.config.pruner,
            };
            let outcome = objective.evaluate(&mut ctx);
            let mut record = ctx.record;
            match outcome {
                Ok(v) if v.is_finite() => {
                    record.status = TrialStatus::Complete;
                    record.final_value = Some(v);
                }
                Ok(v) => {
                    log::warn!("trial {trial_id} returned non-finite value {v}");
                    record.status = TrialStatus::Failed;
                }
                Err(TrialError::Pruned) if !record.intermediate_values.is_empty() => {
                    record.status = TrialStatus::Pruned;
                }
                Err(TrialError::Pruned) => {
                    log::warn!("trial {trial_id} pruned before reporting any value; marking failed");
                    record.status = TrialStatus::Failed;
                }
                Err(TrialError::Failed(msg)) => {
                    log::warn!("trial {trial_id} failed: {msg}");
                    record.status = TrialStatus::Failed;
                }
            }
            log::info!(
                "trial {trial_id} {:?} value={:?} params={:?}",
                record.status,
                record.final_value,
                record.params
            );
            if let Some(j) = self.journal.as_mut() {
                j.append(&record)?;
            }
            self.trials.push(record);
        }
        let pruned = self.trials.iter().filter(|t| t.status == TrialStatus::Pruned).count();
        let failed = self.trials.iter().filter(|t| t.status == TrialStatus::Failed).count();
        self.best_trial().ok_or(HpoError::NoCompletedTrial { pruned, failed })
    }
}
