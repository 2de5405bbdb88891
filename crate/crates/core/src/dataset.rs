//! Paired (embedding, feature-norm) training data.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("row {row}: {what} has length {found}, expected {expected}")]
    Shape {
        row: usize,
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("{0} words, {1} inputs and {2} targets do not line up")]
    Mismatch(usize, usize, usize),
}

/// Rows of `(input, target)` keyed by word, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    words: Vec<String>,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(words: Vec<String>, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self, DatasetError> {
        if words.len() != inputs.len() || inputs.len() != targets.len() {
            return Err(DatasetError::Mismatch(words.len(), inputs.len(), targets.len()));
        }
        if inputs.is_empty() {
            return Err(DatasetError::Empty);
        }
        let (din, dout) = (inputs[0].len(), targets[0].len());
        for (row, (x, y)) in inputs.iter().zip(&targets).enumerate() {
            if x.len() != din {
                return Err(DatasetError::Shape { row, what: "input", found: x.len(), expected: din });
            }
            if y.len() != dout {
                return Err(DatasetError::Shape { row, what: "target", found: y.len(), expected: dout });
            }
        }
        Ok(Self { words, inputs, targets })
    }

    /// Dataset with synthetic `row-N` keys.
    pub fn from_rows(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self, DatasetError> {
        let words = (0..inputs.len()).map(|i| format!("row-{i:06}")).collect();
        Self::new(words, inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.targets[0].len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i]
    }
}
