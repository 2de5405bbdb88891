//! Dative alternation study.
//!
//! Builds double-object (DO) / prepositional-object (PO) sentence pairs from a
//! lexicon, projects the recipient's embedding in both variants, and measures
//! how person-hood features rise in the DO and place-hood features rise in the
//! PO:
//!
//! ```text
//! person_delta = mean over items and person features of  DO − PO
//! place_delta  = mean over items and place features of   PO − DO
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{count_word, locate_word, ExtractError, ExtractRequest, Extractor};
use crate::mlp::{MlpError, ProjectorModel};

const DEFAULT_LEXICON: &str = include_str!("../data/dative_lexicon.json");

#[derive(Debug, Error)]
pub enum DativeError {
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
    #[error("verb `{0}` has no theme")]
    MissingTheme(String),
    #[error("recipient `{recipient}` occurs {count} times in `{sentence}`; expected exactly once")]
    AmbiguousRecipient {
        recipient: String,
        sentence: String,
        count: usize,
    },
    #[error("missing {variant:?} projection for item {item} (`{sentence}`) at layer {layer}")]
    MissingProjection {
        item: usize,
        variant: Variant,
        layer: u32,
        sentence: String,
    },
    #[error("{0} feature set is empty")]
    EmptyFeatureSet(&'static str),
    #[error("feature `{0}` is not produced by model")]
    UnknownFeature(String),
    #[error("no items")]
    NoItems,
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Model(#[from] MlpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verb {
    pub lemma: String,
    pub past: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyLexicon {
    pub recipients: Vec<String>,
    pub verbs: Vec<Verb>,
    /// Theme noun phrase per verb lemma.
    pub themes: BTreeMap<String, String>,
    pub agents: Vec<String>,
}

impl Default for StudyLexicon {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

impl StudyLexicon {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, DativeError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DativeError::Lexicon(e.to_string()))
    }

    pub fn expected_pairs(&self) -> usize {
        self.recipients.len() * self.verbs.len() * self.agents.len()
    }

    pub fn validate(&self) -> Result<(), DativeError> {
        let blank = |s: &String| s.trim().is_empty();
        if self.recipients.iter().any(blank)
            || self.agents.iter().any(blank)
            || self.verbs.iter().any(|v| blank(&v.lemma) || blank(&v.past))
            || self.themes.values().any(blank)
        {
            return Err(DativeError::Lexicon("empty string in lexicon".into()));
        }
        if let Some(r) = self.recipients.iter().find(|r| r.split_whitespace().count() != 1) {
            return Err(DativeError::Lexicon(format!("recipient `{r}` must be a single token")));
        }
        for v in &self.verbs {
            if !self.themes.contains_key(&v.lemma) {
                return Err(DativeError::MissingTheme(v.lemma.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// `[agent] [verb] [recipient] [theme].`
    Do,
    /// `[agent] [verb] [theme] to [recipient].`
    Po,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DativeItem {
    pub agent: String,
    pub verb_lemma: String,
    pub verb_past: String,
    pub theme: String,
    pub recipient: String,
    pub do_sentence: String,
    pub po_sentence: String,
    /// Occurrence index of the recipient among matching tokens (always 0:
    /// the recipient appears once in each sentence).
    pub recipient_occurrence: usize,
}

impl DativeItem {
    pub fn sentence(&self, variant: Variant) -> &str {
        match variant {
            Variant::Do => &self.do_sentence,
            Variant::Po => &self.po_sentence,
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Every recipient × verb × agent combination, recipient-major.
pub fn generate_pairs(lexicon: &StudyLexicon) -> Result<Vec<DativeItem>, DativeError> {
    lexicon.validate()?;
    let mut items = Vec::with_capacity(lexicon.expected_pairs());
    for recipient in &lexicon.recipients {
        for verb in &lexicon.verbs {
            let theme = &lexicon.themes[&verb.lemma];
            for agent in &lexicon.agents {
                let do_sentence = capitalize(&format!("{agent} {} {recipient} {theme}.", verb.past));
                let po_sentence = capitalize(&format!("{agent} {} {theme} to {recipient}.", verb.past));
                for sentence in [&do_sentence, &po_sentence] {
                    let count = count_word(sentence, recipient);
                    if count != 1 {
                        return Err(DativeError::AmbiguousRecipient {
                            recipient: recipient.clone(),
                            sentence: sentence.clone(),
                            count,
                        });
                    }
                }
                items.push(DativeItem {
                    agent: agent.clone(),
                    verb_lemma: verb.lemma.clone(),
                    verb_past: verb.past.clone(),
                    theme: theme.clone(),
                    recipient: recipient.clone(),
                    do_sentence,
                    po_sentence,
                    recipient_occurrence: 0,
                });
            }
        }
    }
    Ok(items)
}

/// Projection lookup keyed by `(item index, variant, layer)`.
pub type Projections = HashMap<(usize, Variant, u32), Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub layer: u32,
    /// Mean DO − PO over items and person features.
    pub person_delta: f64,
    /// Mean PO − DO over items and place features.
    pub place_delta: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub model: String,
    pub layers: Vec<LayerDelta>,
}

fn mean_shift(
    items: &[DativeItem],
    projections: &Projections,
    layer: u32,
    features: &[usize],
    from: Variant,
    to: Variant,
) -> Result<f64, DativeError> {
    let lookup = |i: usize, v: Variant| {
        projections.get(&(i, v, layer)).ok_or_else(|| DativeError::MissingProjection {
            item: i,
            variant: v,
            layer,
            sentence: items[i].sentence(v).to_string(),
        })
    };
    let mut sum = 0.0;
    for i in 0..items.len() {
        let (a, b) = (lookup(i, to)?, lookup(i, from)?);
        for &f in features {
            if f >= a.len() || f >= b.len() {
                return Err(DativeError::UnknownFeature(format!("index {f}")));
            }
            sum += a[f] - b[f];
        }
    }
    Ok(sum / (items.len() * features.len()) as f64)
}

/// Per-layer person and place deltas for one model.
pub fn compute_deltas(
    model: &str,
    items: &[DativeItem],
    projections: &Projections,
    layers: &[u32],
    person_idx: &[usize],
    place_idx: &[usize],
) -> Result<DeltaReport, DativeError> {
    if items.is_empty() {
        return Err(DativeError::NoItems);
    }
    if person_idx.is_empty() {
        return Err(DativeError::EmptyFeatureSet("person"));
    }
    if place_idx.is_empty() {
        return Err(DativeError::EmptyFeatureSet("place"));
    }
    let layers = layers
        .iter()
        .map(|&layer| {
            Ok(LayerDelta {
                layer,
                person_delta: mean_shift(items, projections, layer, person_idx, Variant::Po, Variant::Do)?,
                place_delta: mean_shift(items, projections, layer, place_idx, Variant::Do, Variant::Po)?,
                n_items: items.len(),
            })
        })
        .collect::<Result<Vec<_>, DativeError>>()?;
    Ok(DeltaReport {
        model: model.to_string(),
        layers,
    })
}

/// Embeds and projects the recipient of every item in both variants.
pub fn project_items(
    items: &[DativeItem],
    model: &ProjectorModel,
    extractor: &dyn Extractor,
    projections: &mut Projections,
) -> Result<(), DativeError> {
    let meta = model.metadata();
    for (i, item) in items.iter().enumerate() {
        for variant in [Variant::Do, Variant::Po] {
            let sentence = item.sentence(variant);
            locate_word(sentence, &item.recipient, item.recipient_occurrence)?;
            let vector = extractor.embed(&ExtractRequest {
                sentence: sentence.to_string(),
                word: item.recipient.clone(),
                occurrence: item.recipient_occurrence,
                model_name: meta.source_model.clone(),
                layer: meta.layer,
            })?;
            let cwe: Vec<f64> = vector.iter().map(|v| f64::from(*v)).collect();
            projections.insert((i, variant, meta.layer), model.project(&cwe)?);
        }
    }
    Ok(())
}

fn feature_indices(model: &ProjectorModel, names: &[String]) -> Result<Vec<usize>, DativeError> {
    names
        .iter()
        .map(|n| {
            model
                .metadata()
                .feature_names
                .iter()
                .position(|f| f == n)
                .ok_or_else(|| DativeError::UnknownFeature(n.clone()))
        })
        .collect()
}

/// Runs the study over a set of projectors, one report per source LM with one
/// entry per layer (each projector binds one layer).
pub fn run_dative_study(
    items: &[DativeItem],
    models: &[ProjectorModel],
    extractor: &dyn Extractor,
    person_features: &[String],
    place_features: &[String],
) -> Result<Vec<DeltaReport>, DativeError> {
    let mut by_source: BTreeMap<&str, Vec<&ProjectorModel>> = BTreeMap::new();
    for m in models {
        by_source.entry(m.metadata().source_model.as_str()).or_default().push(m);
    }
    let mut reports = Vec::new();
    for (source, mut group) in by_source {
        group.sort_by_key(|m| m.metadata().layer);
        let mut layers = Vec::new();
        for model in group {
            let mut projections = Projections::new();
            project_items(items, model, extractor, &mut projections)?;
            let layer = model.metadata().layer;
            let report = compute_deltas(
                source,
                items,
                &projections,
                &[layer],
                &feature_indices(model, person_features)?,
                &feature_indices(model, place_features)?,
            )?;
            layers.extend(report.layers);
        }
        reports.push(DeltaReport {
            model: source.to_string(),
            layers,
        });
    }
    Ok(reports)
}

/// Writes `model,layer,feature_set,delta,n_items`, one row per
/// (model, layer, feature set). Person rows carry DO − PO, place rows PO − DO.
pub fn emit_figure_data<W: Write>(reports: &[DeltaReport], out: W) -> Result<(), DativeError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "layer", "feature_set", "delta", "n_items"])?;
    for r in reports {
        for l in &r.layers {
            for (set, delta) in [("person", l.person_delta), ("place", l.place_delta)] {
                w.write_record([
                    r.model.clone(),
                    l.layer.to_string(),
                    set.to_string(),
                    delta.to_string(),
                    l.n_items.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
