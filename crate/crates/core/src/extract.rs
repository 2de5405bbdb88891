//! Client side of the embedding extractor.
//!
//! The real extractor is an external service that runs a masked language
//! model. [`PseudoExtractor`] stands in for it in tests and offline runs: it
//! derives deterministic vectors from hashes of the target word and its
//! neighbours, so identical requests always produce identical bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::EmbeddingRecord;

/// Request for the embedding of one word occurrence at one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractRequest {
    pub sentence: String,
    pub word: String,
    #[serde(default)]
    pub occurrence: usize,
    pub model_name: String,
    pub layer: u32,
}

/// Extractor reply body: `{"vector": [...], "dim": n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub vector: Vec<f32>,
    pub dim: usize,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExtractError {
    #[error("word `{word}` (occurrence {occurrence}) not found in sentence")]
    WordNotFound { word: String, occurrence: usize },
    #[error("extractor unreachable: {0}")]
    Unreachable(String),
    #[error("extractor rejected the request ({status}): {detail}")]
    Rejected { status: u16, detail: String },
    #[error("extractor returned a malformed response: {0}")]
    Malformed(String),
}

pub trait Extractor: Send + Sync {
    fn embed(&self, request: &ExtractRequest) -> Result<Vec<f32>, ExtractError>;
}

/// Lowercased token with surrounding punctuation removed.
pub fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Index of the `occurrence`-th whitespace token equal to `word`, ignoring
/// case and surrounding punctuation.
pub fn locate_word(sentence: &str, word: &str, occurrence: usize) -> Result<usize, ExtractError> {
    let target = normalize_token(word);
    let not_found = || ExtractError::WordNotFound {
        word: word.to_string(),
        occurrence,
    };
    if target.is_empty() {
        return Err(not_found());
    }
    sentence
        .split_whitespace()
        .enumerate()
        .filter(|(_, t)| normalize_token(t) == target)
        .nth(occurrence)
        .map(|(i, _)| i)
        .ok_or_else(not_found)
}

/// Number of times `word` occurs in `sentence` under [`locate_word`] matching.
pub fn count_word(sentence: &str, word: &str) -> usize {
    let target = normalize_token(word);
    sentence
        .split_whitespace()
        .filter(|t| !target.is_empty() && normalize_token(t) == target)
        .count()
}

/// Deterministic hash-based embeddings with a contextual component.
#[derive(Debug, Clone)]
pub struct PseudoExtractor {
    dim: usize,
    window: usize,
}

impl PseudoExtractor {
    pub fn new(dim: usize) -> Self {
        Self { dim, window: 2 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn type_vector(&self, model: &str, token: &str, salt: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        for part in [model, salt, token] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn embed_tokens(&self, model: &str, layer: u32, tokens: &[String], index: usize) -> Vec<f32> {
        let base = self.type_vector(model, &tokens[index], "type");
        let lo = index.saturating_sub(self.window);
        let hi = (index + self.window + 1).min(tokens.len());
        let mut context = vec![0.0; self.dim];
        let mut n = 0;
        for (j, tok) in tokens.iter().enumerate().take(hi).skip(lo) {
            if j == index {
                continue;
            }
            let offset = format!("ctx{}", j as i64 - index as i64);
            for (c, v) in context.iter_mut().zip(self.type_vector(model, tok, &offset)) {
                *c += v;
            }
            n += 1;
        }
        // deeper layers mix in more context
        let mix = f64::from(layer) / (f64::from(layer) + 4.0);
        base.iter()
            .zip(&context)
            .map(|(b, c)| {
                let ctx = if n > 0 { c / n as f64 } else { 0.0 };
                (b + mix * ctx) as f32
            })
            .collect()
    }

    /// Records for every whitespace token of every line at every layer,
    /// mirroring the bulk extractor's output. `context_id` is the 1-based line number.
    pub fn extract_corpus<'a>(
        &self,
        lines: impl IntoIterator<Item = &'a str>,
        model_name: &str,
        layers: &[u32],
    ) -> Vec<EmbeddingRecord> {
        let mut out = Vec::new();
        for (n, line) in lines.into_iter().enumerate() {
            let tokens: Vec<String> = line.split_whitespace().map(normalize_token).collect();
            for (i, tok) in tokens.iter().enumerate() {
                if tok.is_empty() {
                    continue;
                }
                for &layer in layers {
                    out.push(EmbeddingRecord {
                        word: tok.clone(),
                        context_id: (n + 1).to_string(),
                        layer,
                        vector: self.embed_tokens(model_name, layer, &tokens, i),
                    });
                }
            }
        }
        out
    }
}

impl Extractor for PseudoExtractor {
    fn embed(&self, request: &ExtractRequest) -> Result<Vec<f32>, ExtractError> {
        let index = locate_word(&request.sentence, &request.word, request.occurrence)?;
        let tokens: Vec<String> = request.sentence.split_whitespace().map(normalize_token).collect();
        Ok(self.embed_tokens(&request.model_name, request.layer, &tokens, index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(sentence: &str, word: &str, occurrence: usize, layer: u32) -> ExtractRequest {
        ExtractRequest {
            sentence: sentence.into(),
            word: word.into(),
            occurrence,
            model_name: "pseudo".into(),
            layer,
        }
    }

    #[test]
    fn locating_words() {
        assert_eq!(locate_word("I sent London the letter.", "london", 0), Ok(2));
        assert_eq!(locate_word("I sent the letter to London.", "London", 0), Ok(5));
        assert_eq!(locate_word("the cat saw the dog", "the", 1), Ok(3));
        assert!(matches!(
            locate_word("the cat", "the", 1),
            Err(ExtractError::WordNotFound { occurrence: 1, .. })
        ));
        assert!(locate_word("a b c", "...", 0).is_err());
        assert_eq!(count_word("London, London and london!", "London"), 3);
    }

    #[test]
    fn pseudo_embeddings_are_deterministic_and_contextual() {
        let x = PseudoExtractor::new(8);
        let a = x.embed(&req("I sent London the letter.", "London", 0, 8)).unwrap();
        assert_eq!(a, x.embed(&req("I sent London the letter.", "London", 0, 8)).unwrap());
        assert_eq!(a.len(), 8);
        let b = x.embed(&req("I sent the letter to London.", "London", 0, 8)).unwrap();
        assert_ne!(a, b);
        // layer 0 carries no context
        let c = x.embed(&req("I sent London the letter.", "London", 0, 0)).unwrap();
        let d = x.embed(&req("I sent the letter to London.", "London", 0, 0)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn corpus_record_count() {
        let x = PseudoExtractor::new(4);
        let lines = ["the cat sat", "a dog ran"];
        assert_eq!(x.extract_corpus(lines, "m", &[0]).len(), 6);
        let recs = x.extract_corpus(lines, "m", &[0, 3]);
        assert_eq!(recs.len(), 12);
        assert_eq!(recs[0].context_id, "1");
        assert_eq!(recs[11].word, "ran");
    }
}
