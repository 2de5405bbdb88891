//! Ranked feature predictions for a word in context.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{locate_word, ExtractError, ExtractRequest, Extractor};
use crate::mlp::{MlpError, ProjectorModel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub sentence: String,
    pub word: String,
    #[serde(default)]
    pub occurrence: usize,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub features: Vec<RankedFeature>,
    pub model_id: String,
    pub layer: u32,
    pub norm_space: String,
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Model(#[from] MlpError),
}

/// Sorts features by value, greatest first; equal values keep feature order.
pub fn rank_features(names: &[String], values: &[f64]) -> Vec<RankedFeature> {
    let mut ranked: Vec<RankedFeature> = names
        .iter()
        .zip(values)
        .map(|(name, value)| RankedFeature {
            name: name.clone(),
            value: *value,
        })
        .collect();
    ranked.sort_by(|a, b| b.value.total_cmp(&a.value));
    ranked
}

/// Embeds `word` in `sentence` with the model's source LM and layer, projects
/// it, and ranks the features.
pub fn predict(
    model_id: &str,
    model: &ProjectorModel,
    extractor: &dyn Extractor,
    sentence: &str,
    word: &str,
    occurrence: usize,
) -> Result<PredictResponse, PredictError> {
    locate_word(sentence, word, occurrence)?;
    let meta = model.metadata();
    let request = ExtractRequest {
        sentence: sentence.to_string(),
        word: word.to_string(),
        occurrence,
        model_name: meta.source_model.clone(),
        layer: meta.layer,
    };
    let vector = extractor.embed(&request)?;
    if vector.len() != model.config().input_dim {
        return Err(ExtractError::Malformed(format!(
            "vector has {} dimensions, model `{model_id}` expects {}",
            vector.len(),
            model.config().input_dim
        ))
        .into());
    }
    let cwe: Vec<f64> = vector.iter().map(|v| f64::from(*v)).collect();
    let values = model.project(&cwe)?;
    Ok(PredictResponse {
        features: rank_features(&meta.feature_names, &values),
        model_id: model_id.to_string(),
        layer: meta.layer,
        norm_space: meta.norm_space.clone(),
    })
}

/// Plain-text table, one feature per line.
pub fn format_table(response: &PredictResponse) -> String {
    let width = response.features.iter().map(|f| f.name.len()).max().unwrap_or(7).max(7);
    let mut out = format!(
        "# model {} | layer {} | space {}\n{:<width$}  value\n",
        response.model_id, response.layer, response.norm_space, "feature"
    );
    for f in &response.features {
        out.push_str(&format!("{:<width$}  {:.4}\n", f.name, f.value));
    }
    out
}
