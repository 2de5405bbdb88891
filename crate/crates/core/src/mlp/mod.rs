//! One-hidden-layer perceptron mapping embeddings onto feature-norm vectors.
//!
//! The network is `y = W2 · dropout(relu(W1 · x + b1)) + b2`. Dropout is
//! inverted: kept activations are scaled by `1 / keep` during training so the
//! evaluation pass needs no correction.

mod io;
mod train;

pub use io::{load_model, read_model, save_model, write_model, ModelFileError, MODEL_FORMAT_VERSION};
pub use train::{evaluate_loss, train, train_loop, train_with_observer, Adam, EarlyStopping, EpochLosses, Progress, TrainReport};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset has {0} rows; training needs at least 5")]
    TooSmall(usize),
    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("trial pruned at epoch {epoch}")]
    Pruned { epoch: usize },
}

fn default_dropout() -> f64 {
    0.5
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    6
}
fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

impl MlpConfig {
    /// Config with the demo-model defaults (dropout 0.5, 100 epochs, patience 6, 80/20 split).
    pub fn new(input_dim: usize, output_dim: usize, hidden_size: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_size,
            dropout: default_dropout(),
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            seed: 0,
            val_fraction: default_val_fraction(),
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::Config(m.to_string()));
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input and output dimensions must be positive");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Network parameters, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    /// `hidden × input_dim`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output_dim × hidden`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Params {
    pub fn zeros(input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output_dim * hidden],
            b2: vec![0.0; output_dim],
        }
    }

    /// Uniform fan-in initialization: each layer draws from `±1/sqrt(fan_in)`.
    pub fn init(input_dim: usize, hidden: usize, output_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden, output_dim);
        let a1 = 1.0 / (input_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        for w in p.w1.iter_mut().chain(p.b1.iter_mut()) {
            *w = rng.random_range(-a1..a1);
        }
        for w in p.w2.iter_mut().chain(p.b2.iter_mut()) {
            *w = rng.random_range(-a2..a2);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Blocks in storage order: W1, b1, W2, b2.
    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn get(&self, i: usize) -> f64 {
        let mut i = i;
        for b in self.blocks() {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut i = i;
        for b in self.blocks_mut() {
            if i < b.len() {
                b[i] = value;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Rounds every parameter to the nearest f32, the precision of the model file.
    pub fn rounded_to_f32(&self) -> Self {
        let mut p = self.clone();
        for b in p.blocks_mut() {
            for w in b.iter_mut() {
                *w = *w as f32 as f64;
            }
        }
        p
    }

    fn check_input(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() != self.input_dim {
            return Err(MlpError::Shape(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        (0..self.output_dim)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                self.b2[k] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// Forward-pass mode. Training mode applies dropout using the supplied generator.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

/// Per-unit multipliers for one forward pass: 0 for dropped units, `1/keep` otherwise.
fn dropout_mask(hidden: usize, mode: &mut Mode<'_>) -> Option<Vec<f64>> {
    match mode {
        Mode::Eval => None,
        Mode::Train { dropout, .. } if *dropout == 0.0 => None,
        Mode::Train { dropout, rng } => {
            let keep = 1.0 - *dropout;
            Some(
                (0..hidden)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
            )
        }
    }
}

/// Hidden representation after the rectifier and (in training mode) dropout.
pub fn hidden_activations(params: &Params, x: &[f64], mut mode: Mode<'_>) -> Result<Vec<f64>, MlpError> {
    params.check_input(x)?;
    let mut h: Vec<f64> = params.pre_activation(x).into_iter().map(|z| z.max(0.0)).collect();
    if let Some(mask) = dropout_mask(params.hidden, &mut mode) {
        h.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
    }
    Ok(h)
}

pub fn forward_params(params: &Params, x: &[f64], mode: Mode<'_>) -> Result<Vec<f64>, MlpError> {
    let h = hidden_activations(params, x, mode)?;
    Ok(params.output(&h))
}

/// Mean over every batch element and output dimension of the squared error.
pub fn mse_loss(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64, MlpError> {
    if pred.len() != target.len() {
        return Err(MlpError::Shape(format!(
            "batch sizes differ: {} predictions, {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(MlpError::Shape("empty batch".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(MlpError::Shape(format!(
                "prediction has length {}, target {}",
                p.len(),
                t.len()
            )));
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    Ok(sum / count as f64)
}

/// Batch MSE and its gradient with respect to every parameter.
///
/// With `mode = Train`, one dropout mask is drawn per example, in batch order.
pub fn loss_and_grad(
    params: &Params,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    mut mode: Mode<'_>,
) -> Result<(f64, Params), MlpError> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(MlpError::Shape("inputs and targets must be non-empty and equally long".into()));
    }
    let (din, hid, dout) = (params.input_dim, params.hidden, params.output_dim);
    let scale = 2.0 / (inputs.len() * dout) as f64;
    let mut grad = Params::zeros(din, hid, dout);
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        params.check_input(x)?;
        if t.len() != dout {
            return Err(MlpError::Shape(format!("target has length {}, model emits {}", t.len(), dout)));
        }
        let z = params.pre_activation(x);
        let mask = dropout_mask(hid, &mut mode);
        let h: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(j, v)| v.max(0.0) * mask.as_ref().map_or(1.0, |m| m[j]))
            .collect();
        let y = params.output(&h);
        let dy: Vec<f64> = y.iter().zip(t.iter()).map(|(a, b)| scale * (a - b)).collect();
        loss += y.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();

        let mut dh = vec![0.0; hid];
        for k in 0..dout {
            grad.b2[k] += dy[k];
            let row = k * hid;
            for j in 0..hid {
                grad.w2[row + j] += dy[k] * h[j];
                dh[j] += params.w2[row + j] * dy[k];
            }
        }
        for j in 0..hid {
            if z[j] <= 0.0 {
                continue;
            }
            let dz = dh[j] * mask.as_ref().map_or(1.0, |m| m[j]);
            if dz == 0.0 {
                continue;
            }
            grad.b1[j] += dz;
            let row = j * din;
            for i in 0..din {
                grad.w1[row + i] += dz * x[i];
            }
        }
    }
    Ok((loss / (inputs.len() * dout) as f64, grad))
}

/// Binds a trained network to the embedding source and norm space it maps between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub source_model: String,
    pub layer: u32,
    pub norm_space: String,
    pub feature_names: Vec<String>,
}

impl ModelMetadata {
    pub fn anonymous(output_dim: usize) -> Self {
        Self {
            source_model: String::new(),
            layer: 0,
            norm_space: String::new(),
            feature_names: (0..output_dim).map(|i| format!("f{i}")).collect(),
        }
    }
}

/// A trained projector. Parameters are held at f32 precision, matching the model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorModel {
    config: MlpConfig,
    params: Params,
    metadata: ModelMetadata,
}

impl ProjectorModel {
    pub fn new(config: MlpConfig, params: Params, metadata: ModelMetadata) -> Result<Self, MlpError> {
        if params.input_dim != config.input_dim
            || params.hidden != config.hidden_size
            || params.output_dim != config.output_dim
            || params.w1.len() != config.hidden_size * config.input_dim
            || params.b1.len() != config.hidden_size
            || params.w2.len() != config.output_dim * config.hidden_size
            || params.b2.len() != config.output_dim
        {
            return Err(MlpError::Shape("parameter shapes do not match the config".into()));
        }
        if metadata.feature_names.len() != config.output_dim {
            return Err(MlpError::Shape(format!(
                "metadata names {} features, model emits {}",
                metadata.feature_names.len(),
                config.output_dim
            )));
        }
        Ok(Self {
            config,
            params: params.rounded_to_f32(),
            metadata,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn with_metadata(self, metadata: ModelMetadata) -> Result<Self, MlpError> {
        Self::new(self.config, self.params, metadata)
    }

    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<Vec<f64>, MlpError> {
        forward_params(&self.params, x, mode)
    }

    /// Evaluation-mode prediction. Values are not clamped to the norm scale.
    pub fn project(&self, cwe: &[f64]) -> Result<Vec<f64>, MlpError> {
        self.forward(cwe, Mode::Eval)
    }

    /// Prediction paired with feature names, in feature order.
    pub fn project_named(&self, cwe: &[f64]) -> Result<Vec<(String, f64)>, MlpError> {
        Ok(self
            .metadata
            .feature_names
            .iter()
            .cloned()
            .zip(self.project(cwe)?)
            .collect())
    }
}
