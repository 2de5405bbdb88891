//! Extractor backends: the HTTP sidecar client and an in-process stub.

use std::collections::BTreeMap;
use std::time::Duration;

use featurescope::extract::{ExtractError, ExtractRequest, ExtractResponse, Extractor, PseudoExtractor};
use serde::Deserialize;

/// Client for `POST {base}/embed`.
#[derive(Debug, Clone)]
pub struct HttpExtractor {
    url: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ErrorBody {
    #[serde(default)]
    detail: String,
}

impl HttpExtractor {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            url: format!("{}/embed", base_url.trim_end_matches('/')),
            agent,
        }
    }
}

impl Extractor for HttpExtractor {
    fn embed(&self, request: &ExtractRequest) -> Result<Vec<f32>, ExtractError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| ExtractError::Unreachable(format!("{}: {e}", self.url)))?;
        let status = resp.status().as_u16();
        if status == 200 {
            let body: ExtractResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| ExtractError::Malformed(e.to_string()))?;
            if body.vector.len() != body.dim {
                return Err(ExtractError::Malformed(format!(
                    "dim {} but vector has {} entries",
                    body.dim,
                    body.vector.len()
                )));
            }
            return Ok(body.vector);
        }
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        let detail = serde_json::from_str::<ErrorBody>(&text).map(|b| b.detail).unwrap_or(text);
        if status == 422 {
            Err(ExtractError::WordNotFound {
                word: request.word.clone(),
                occurrence: request.occurrence,
            })
        } else {
            Err(ExtractError::Rejected { status, detail })
        }
    }
}

/// Deterministic pseudo-embeddings sized per source model.
#[derive(Debug, Clone)]
pub struct StubExtractor {
    default: PseudoExtractor,
    by_model: BTreeMap<String, PseudoExtractor>,
}

impl StubExtractor {
    pub fn new(default_dim: usize) -> Self {
        Self {
            default: PseudoExtractor::new(default_dim),
            by_model: BTreeMap::new(),
        }
    }

    pub fn with_model(mut self, model_name: &str, dim: usize) -> Self {
        self.by_model.insert(model_name.to_string(), PseudoExtractor::new(dim));
        self
    }
}

impl Extractor for StubExtractor {
    fn embed(&self, request: &ExtractRequest) -> Result<Vec<f32>, ExtractError> {
        self.by_model
            .get(&request.model_name)
            .unwrap_or(&self.default)
            .embed(request)
    }
}
