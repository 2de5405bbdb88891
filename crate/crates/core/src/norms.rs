//! Semantic feature-norm spaces.
//!
//! A norm file is delimited text (comma or tab, detected from the header) whose
//! first column holds the word and whose remaining columns hold one rating per
//! feature. Words are case-folded at load.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rating scale used by the Binder norms.
pub const BINDER_SCALE: (f64, f64) = (0.0, 6.0);

/// Binder features that signal person-hood of a referent.
pub const PERSON_FEATURES: [&str; 5] = ["Biomotion", "Body", "Human", "Face", "Speech"];

/// Binder features that signal place-hood of a referent.
pub const PLACE_FEATURES: [&str; 2] = ["Landmark", "Scene"];

/// Definitions for the Binder features used in the dative study.
pub fn binder_definitions() -> BTreeMap<String, String> {
    [
        ("Biomotion", "showing movement like that of a living thing"),
        ("Body", "having human or human-like body parts"),
        ("Human", "having human or human-like intentions, plans, or goals"),
        ("Face", "having a human or human-like face"),
        ("Speech", "someone or something that talks"),
        ("Landmark", "having a fixed location, as on a map"),
        ("Scene", "bringing to mind a particular setting or physical location"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Error)]
pub enum NormsError {
    #[error("failed to read norm file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("value {value} for word `{word}`, feature `{feature}` is outside [{min}, {max}]")]
    OutOfBounds {
        word: String,
        feature: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),
    #[error("duplicate word `{0}` (after case folding)")]
    DuplicateWord(String),
    #[error("feature `{0}` is constant over the vocabulary and cannot be min-max normalized")]
    ConstantFeature(String),
    #[error("unknown feature `{name}`; valid features are: {}", valid.join(", "))]
    UnknownFeature { name: String, valid: Vec<String> },
    #[error("invalid space: {0}")]
    Invalid(String),
}

/// Normalization applied after loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    MinmaxPerFeature,
}

/// Per-space loading configuration, stored as JSON next to the norm file.
///
/// Absent bounds mean "use the observed column range" and disable bound
/// validation. A space named `binder` always uses the 0..6 scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub name: String,
    #[serde(default)]
    pub scale_min: Option<f64>,
    #[serde(default)]
    pub scale_max: Option<f64>,
    #[serde(default)]
    pub normalize: Normalization,
    /// Optional feature definitions keyed by feature name.
    #[serde(default)]
    pub definitions: BTreeMap<String, String>,
}

impl SpaceConfig {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn binder() -> Self {
        Self {
            name: "binder".into(),
            scale_min: Some(BINDER_SCALE.0),
            scale_max: Some(BINDER_SCALE.1),
            normalize: Normalization::None,
            definitions: binder_definitions(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, NormsError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| NormsError::Invalid(e.to_string()))
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        if self.name.eq_ignore_ascii_case("binder") {
            return Some(BINDER_SCALE);
        }
        match (self.scale_min, self.scale_max) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    #[serde(default)]
    pub definition: String,
}

/// A named semantic feature space with per-word target vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSpace {
    name: String,
    features: Vec<FeatureDef>,
    vocabulary: IndexMap<String, Vec<f64>>,
    scale_min: f64,
    scale_max: f64,
}

impl NormSpace {
    /// Builds a space from in-memory parts, enforcing every invariant.
    pub fn new(
        name: impl Into<String>,
        features: Vec<FeatureDef>,
        rows: impl IntoIterator<Item = (String, Vec<f64>)>,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self, NormsError> {
        let name = name.into();
        let mut seen = HashSet::new();
        for f in &features {
            if f.name.trim().is_empty() {
                return Err(NormsError::Invalid("empty feature name".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(NormsError::DuplicateFeature(f.name.clone()));
            }
        }
        let mut vocabulary = IndexMap::new();
        for (word, vector) in rows {
            let word = word.to_lowercase();
            if vector.len() != features.len() {
                return Err(NormsError::Invalid(format!(
                    "word `{word}` has {} values, expected {}",
                    vector.len(),
                    features.len()
                )));
            }
            if vocabulary.contains_key(&word) {
                return Err(NormsError::DuplicateWord(word));
            }
            vocabulary.insert(word, vector);
        }
        let (scale_min, scale_max) = match bounds {
            Some((lo, hi)) => {
                if !(lo <= hi) {
                    return Err(NormsError::Invalid(format!("scale bounds [{lo}, {hi}] are empty")));
                }
                for (word, vector) in &vocabulary {
                    for (value, feature) in vector.iter().zip(&features) {
                        if !(lo <= *value && *value <= hi) {
                            return Err(NormsError::OutOfBounds {
                                word: word.clone(),
                                feature: feature.name.clone(),
                                value: *value,
                                min: lo,
                                max: hi,
                            });
                        }
                    }
                }
                (lo, hi)
            }
            None => observed_range(&vocabulary),
        };
        Ok(Self {
            name,
            features,
            vocabulary,
            scale_min,
            scale_max,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &[FeatureDef] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    pub fn scale(&self) -> (f64, f64) {
        (self.scale_min, self.scale_max)
    }

    /// Target vector for a word; the lookup is case-folded.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vocabulary.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Words in file order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vocabulary.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vocabulary.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    /// Writes the space back out in the comma-delimited load format.
    ///
    /// Values use the shortest representation that parses back to the same
    /// `f64`, so a load of the output reproduces the space exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), NormsError> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["word".to_string()];
        header.extend(self.feature_names());
        writer.write_record(&header).map_err(csv_io)?;
        for (word, vector) in &self.vocabulary {
            let mut row = vec![word.clone()];
            row.extend(vector.iter().map(|v| v.to_string()));
            writer.write_record(&row).map_err(csv_io)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> NormsError {
    NormsError::Io(std::io::Error::other(e))
}

fn observed_range(vocabulary: &IndexMap<String, Vec<f64>>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vocabulary.values().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Loads a norm file and applies the configured bounds and normalization.
pub fn load_norms(path: impl AsRef<Path>, config: &SpaceConfig) -> Result<NormSpace, NormsError> {
    let text = std::fs::read_to_string(path)?;
    parse_norms(&text, config)
}

/// Parses norm text; see [`load_norms`].
pub fn parse_norms(text: &str, config: &SpaceConfig) -> Result<NormSpace, NormsError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_error(&e))?,
        None => {
            return Err(NormsError::Parse {
                line: 1,
                message: "missing header row".into(),
            })
        }
    };
    if header.len() < 2 {
        return Err(NormsError::Parse {
            line: 1,
            message: "header must name a word column and at least one feature".into(),
        });
    }
    let features: Vec<FeatureDef> = header
        .iter()
        .skip(1)
        .map(|name| FeatureDef {
            name: name.to_string(),
            definition: config.definitions.get(name).cloned().unwrap_or_default(),
        })
        .collect();

    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| parse_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(NormsError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let word = record[0].to_string();
        if word.is_empty() {
            return Err(NormsError::Parse {
                line,
                message: "empty word".into(),
            });
        }
        let mut vector = Vec::with_capacity(features.len());
        for (field, feature) in record.iter().skip(1).zip(&features) {
            let value: f64 = field.parse().map_err(|_| NormsError::Parse {
                line,
                message: format!("`{field}` is not a number (feature `{}`)", feature.name),
            })?;
            if !value.is_finite() {
                return Err(NormsError::Parse {
                    line,
                    message: format!("non-finite value for feature `{}`", feature.name),
                });
            }
            vector.push(value);
        }
        rows.push((word, vector));
    }

    let space = NormSpace::new(config.name.clone(), features, rows, config.bounds())?;
    normalize_features(space, config.normalize)
}

fn parse_error(e: &csv::Error) -> NormsError {
    NormsError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Applies a normalization mode. `MinmaxPerFeature` maps each column onto
/// [0, 1] independently and sets the space bounds to [0, 1].
pub fn normalize_features(space: NormSpace, mode: Normalization) -> Result<NormSpace, NormsError> {
    match mode {
        Normalization::None => Ok(space),
        Normalization::MinmaxPerFeature => {
            let dim = space.dim();
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for v in space.vocabulary.values() {
                for j in 0..dim {
                    lo[j] = lo[j].min(v[j]);
                    hi[j] = hi[j].max(v[j]);
                }
            }
            for j in 0..dim {
                if !(hi[j] > lo[j]) {
                    return Err(NormsError::ConstantFeature(space.features[j].name.clone()));
                }
            }
            let NormSpace {
                name,
                features,
                vocabulary,
                ..
            } = space;
            let vocabulary = vocabulary
                .into_iter()
                .map(|(w, v)| {
                    let scaled = v
                        .iter()
                        .enumerate()
                        .map(|(j, x)| ((x - lo[j]) / (hi[j] - lo[j])).clamp(0.0, 1.0))
                        .collect();
                    (w, scaled)
                })
                .collect();
            Ok(NormSpace {
                name,
                features,
                vocabulary,
                scale_min: 0.0,
                scale_max: 1.0,
            })
        }
    }
}

/// Resolves feature names to column indices, in the order requested.
pub fn select_features<S: AsRef<str>>(space: &NormSpace, names: &[S]) -> Result<Vec<usize>, NormsError> {
    names
        .iter()
        .map(|name| {
            let name = name.as_ref();
            space
                .features
                .iter()
                .position(|f| f.name == name)
                .ok_or_else(|| NormsError::UnknownFeature {
                    name: name.to_string(),
                    valid: space.feature_names(),
                })
        })
        .collect()
}
