use std::path::Path;

use super::{derive_search_space, HpoError, HyperParams, Study, StudyConfig, TrialContext, TrialError, TrialRecord};
use crate::dataset::Dataset;
use crate::mlp::{train, train_with_observer, MlpConfig, MlpError, ProjectorModel, TrainReport};

/// Result of tuning a projector.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub model: ProjectorModel,
    pub report: TrainReport,
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

fn with_params(base: &MlpConfig, p: HyperParams) -> MlpConfig {
    MlpConfig {
        hidden_size: p.hidden_size,
        batch_size: p.batch_size,
        learning_rate: p.learning_rate,
        ..base.clone()
    }
}

/// Tunes hidden size, batch size, and learning rate on `dataset`.
///
/// Every trial trains with `base` (same seed, hence the same split) and
/// reports its per-epoch validation loss as intermediate values. The trial
/// value is the best validation loss. The winning configuration is retrained
/// once to produce the returned model; training is deterministic, so it
/// matches the trial exactly, including when the best trial came from a
/// resumed journal.
pub fn run_study(
    config: &StudyConfig,
    dataset: &Dataset,
    base: &MlpConfig,
    journal: Option<&Path>,
) -> Result<TuneOutcome, HpoError> {
    let base = MlpConfig {
        input_dim: dataset.input_dim(),
        output_dim: dataset.output_dim(),
        ..base.clone()
    };
    let space = derive_search_space(base.input_dim, base.output_dim);
    let mut study = Study::new(config.clone(), space)?;
    if let Some(path) = journal {
        study = study.with_journal(path)?;
    }

    let best = study
        .optimize(|ctx: &mut TrialContext<'_>| {
            let cfg = with_params(&base, ctx.params());
            match train_with_observer(dataset, &cfg, |epoch, val| ctx.report(epoch, val)) {
                Ok((_, report)) => Ok(report.best_val_loss),
                Err(MlpError::Pruned { .. }) => Err(TrialError::Pruned),
                Err(e) => Err(TrialError::Failed(e.to_string())),
            }
        })?
        .clone();

    let (model, report) = train(dataset, &with_params(&base, best.params))?;
    if Some(report.best_val_loss) != best.final_value {
        log::warn!(
            "retrained best trial scored {} but the study recorded {:?}",
            report.best_val_loss,
            best.final_value
        );
    }
    Ok(TuneOutcome {
        model,
        report,
        best,
        trials: study.trials().to_vec(),
    })
}
