use std::cell::RefCell;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, forward_params, mse_loss, MlpConfig, MlpError, Mode, ModelMetadata, Params, ProjectorModel};
use crate::dataset::Dataset;

/// Adam with the usual defaults and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(lr: f64, shape: &Params) -> Self {
        let zeros = Params::zeros(shape.input_dim, shape.hidden, shape.output_dim);
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut Params, grad: &Params) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut());
        for (((p, g), m), v) in blocks {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Outcome of feeding one validation loss to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stale,
    /// `patience` consecutive epochs without strict improvement.
    Exhausted,
}

/// Patience counter that resets only on a strict improvement over the best loss seen.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            Progress::Improved
        } else {
            self.stale += 1;
            if self.patience > 0 && self.stale >= self.patience {
                Progress::Exhausted
            } else {
                Progress::Stale
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub train: f64,
    pub val: f64,
}

/// Per-epoch history of a training run. Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub epochs_run: usize,
}

/// Runs epochs until `max_epochs` or until early stopping fires.
///
/// `epoch` is called with 1-based epoch numbers and returns that epoch's
/// losses; `improved` is called whenever the validation loss sets a new best.
/// A patience of 0 disables early stopping.
pub fn train_loop(
    max_epochs: usize,
    patience: usize,
    mut epoch: impl FnMut(usize) -> Result<EpochLosses, MlpError>,
    mut improved: impl FnMut(usize),
) -> Result<TrainReport, MlpError> {
    let mut stopper = EarlyStopping::new(patience);
    let mut report = TrainReport {
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        epochs_run: 0,
    };
    for e in 1..=max_epochs {
        let losses = epoch(e)?;
        if !losses.train.is_finite() || !losses.val.is_finite() {
            return Err(MlpError::Diverged { epoch: e });
        }
        report.train_losses.push(losses.train);
        report.val_losses.push(losses.val);
        report.epochs_run = e;
        match stopper.observe(e, losses.val) {
            Progress::Improved => improved(e),
            Progress::Stale => {}
            Progress::Exhausted => {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.best_epoch = stopper.best_epoch();
    report.best_val_loss = stopper.best();
    Ok(report)
}

/// Mean-squared error of `params` (evaluation mode) over the given rows.
pub fn evaluate_loss(params: &Params, dataset: &Dataset, rows: &[usize]) -> Result<f64, MlpError> {
    let mut preds = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    for &i in rows {
        preds.push(forward_params(params, dataset.input(i), Mode::Eval)?);
        targets.push(dataset.target(i).to_vec());
    }
    mse_loss(&preds, &targets)
}

/// Seeded shuffle, then `(train, validation)` with the validation rows last.
pub(crate) fn split_rows(n: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub fn train(dataset: &Dataset, config: &MlpConfig) -> Result<(ProjectorModel, TrainReport), MlpError> {
    train_with_observer(dataset, config, |_, _| false)
}

/// Trains and reports each epoch's validation loss to `observer`; when the
/// observer returns `true` training stops with [`MlpError::Pruned`].
///
/// The returned model carries the parameters of the epoch with the lowest
/// validation loss. Validation is computed on the f32-rounded parameters, so
/// the returned model reproduces `best_val_loss` exactly.
pub fn train_with_observer(
    dataset: &Dataset,
    config: &MlpConfig,
    mut observer: impl FnMut(usize, f64) -> bool,
) -> Result<(ProjectorModel, TrainReport), MlpError> {
    config.validate()?;
    if dataset.len() < 5 {
        return Err(MlpError::TooSmall(dataset.len()));
    }
    if dataset.input_dim() != config.input_dim || dataset.output_dim() != config.output_dim {
        return Err(MlpError::Shape(format!(
            "dataset maps {}→{}, config expects {}→{}",
            dataset.input_dim(),
            dataset.output_dim(),
            config.input_dim,
            config.output_dim
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train_rows, val_rows) = split_rows(dataset.len(), config.val_fraction, &mut rng);
    let mut params = Params::init(config.input_dim, config.hidden_size, config.output_dim, &mut rng);
    let mut adam = Adam::new(config.learning_rate, &params);
    let snapshot = RefCell::new(params.rounded_to_f32());
    let mut best = snapshot.borrow().clone();

    let report = train_loop(
        config.max_epochs,
        config.patience,
        |epoch| {
            train_rows.shuffle(&mut rng);
            let mut weighted = 0.0;
            for batch in train_rows.chunks(config.batch_size) {
                let xs: Vec<&[f64]> = batch.iter().map(|&i| dataset.input(i)).collect();
                let ys: Vec<&[f64]> = batch.iter().map(|&i| dataset.target(i)).collect();
                let mode = Mode::Train {
                    dropout: config.dropout,
                    rng: &mut rng,
                };
                let (loss, grad) = loss_and_grad(&params, &xs, &ys, mode)?;
                if !loss.is_finite() {
                    return Err(MlpError::Diverged { epoch });
                }
                weighted += loss * batch.len() as f64;
                adam.update(&mut params, &grad);
            }
            let rounded = params.rounded_to_f32();
            let val = evaluate_loss(&rounded, dataset, &val_rows)?;
            *snapshot.borrow_mut() = rounded;
            if val.is_finite() && observer(epoch, val) {
                return Err(MlpError::Pruned { epoch });
            }
            Ok(EpochLosses {
                train: weighted / train_rows.len() as f64,
                val,
            })
        },
        |_| best = snapshot.borrow().clone(),
    )?;

    let model = ProjectorModel::new(config.clone(), best, ModelMetadata::anonymous(config.output_dim))?;
    Ok((model, report))
}
