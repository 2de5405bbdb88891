//! Model registry: a JSON object mapping model ids to projector files.
//!
//! ```json
//! { "bert-l8-binder": { "path": "models/bert-l8.fsproj", "source_model": "bert-base-uncased", "layer": 8 } }
//! ```
//!
//! Relative paths resolve against the registry file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use featurescope::mlp::{load_model, ProjectorModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub path: PathBuf,
    pub source_model: String,
    pub layer: u32,
}

/// One row of `GET /models`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub source_model: String,
    pub layer: u32,
    pub norm_space: String,
    pub feature_count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    models: BTreeMap<String, ProjectorModel>,
}

impl Registry {
    pub fn from_models(models: impl IntoIterator<Item = (String, ProjectorModel)>) -> Self {
        Self {
            models: models.into_iter().collect(),
        }
    }

    /// Loads every entry. Entries whose file is unreadable or corrupt, or
    /// whose metadata disagrees with the entry, are skipped with a warning.
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading registry {}", path.display()))?;
        let entries: BTreeMap<String, RegistryEntry> =
            serde_json::from_str(&text).with_context(|| format!("parsing registry {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut models = BTreeMap::new();
        for (id, entry) in entries {
            let file = base.join(&entry.path);
            match load_model(&file) {
                Ok(model) => {
                    let meta = model.metadata();
                    if meta.source_model != entry.source_model || meta.layer != entry.layer {
                        log::warn!(
                            "skipping model `{id}`: registry says {}@{} but {} holds {}@{}",
                            entry.source_model,
                            entry.layer,
                            file.display(),
                            meta.source_model,
                            meta.layer
                        );
                        continue;
                    }
                    models.insert(id, model);
                }
                Err(e) => log::warn!("skipping model `{id}` ({}): {e}", file.display()),
            }
        }
        Ok(Self { models })
    }

    pub fn get(&self, model_id: &str) -> Option<&ProjectorModel> {
        self.models.get(model_id)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> impl Iterator<Item = (&str, &ProjectorModel)> {
        self.models.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Sorted by model id.
    pub fn list(&self) -> Vec<ModelInfo> {
        self.models
            .iter()
            .map(|(id, m)| {
                let meta = m.metadata();
                ModelInfo {
                    model_id: id.clone(),
                    source_model: meta.source_model.clone(),
                    layer: meta.layer,
                    norm_space: meta.norm_space.clone(),
                    feature_count: meta.feature_names.len(),
                }
            })
            .collect()
    }
}
