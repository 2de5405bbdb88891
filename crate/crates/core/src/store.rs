//! On-disk store of contextual embeddings.
//!
//! Layout of a store directory:
//!
//! ```text
//! manifest.json      committed state: model name, dimensionality, per-layer counts
//! layer-<L>.f32      little-endian f32 vectors, back to back
//! layer-<L>.idx      one JSON line per vector: {"word", "context_id", "offset"}
//! ```
//!
//! The manifest is the commit point. A batch first appends to the data and
//! index files and then atomically replaces the manifest; bytes past the
//! committed counts belong to an interrupted batch and are discarded when the
//! store is next opened for writing.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::norms::NormSpace;

const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {index} has dimensionality {found}, store expects {expected}")]
    Dimensionality { index: usize, found: usize, expected: usize },
    #[error("store integrity error: {0}")]
    Integrity(String),
    #[error("layer {layer} not in store; available layers: {available:?}")]
    UnknownLayer { layer: u32, available: Vec<u32> },
    #[error("line {line}: invalid embedding record: {message}")]
    Ingest { line: usize, message: String },
    #[error("no overlap between {aggregates} embedded words and {norms} norm words")]
    EmptyIntersection { aggregates: usize, norms: usize },
    #[error("store already exists at {0}")]
    Exists(PathBuf),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

/// One contextual embedding of a word occurrence at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub word: String,
    pub context_id: String,
    pub layer: u32,
    pub vector: Vec<f32>,
}

/// Mean embedding of one word over all its contexts at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WordAggregate {
    pub word: String,
    pub layer: u32,
    pub mean_vector: Vec<f64>,
    pub context_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub model_name: String,
    /// Zero until the first batch lands.
    pub dimensionality: usize,
    pub layers: Vec<u32>,
    pub record_count: BTreeMap<u32, u64>,
}

impl StoreManifest {
    pub fn records_in(&self, layer: u32) -> u64 {
        self.record_count.get(&layer).copied().unwrap_or(0)
    }

    pub fn total_records(&self) -> u64 {
        self.record_count.values().sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    word: String,
    context_id: String,
    offset: u64,
}

#[derive(Debug)]
pub struct EmbeddingStore {
    dir: PathBuf,
    manifest: StoreManifest,
}

impl EmbeddingStore {
    pub fn create(dir: impl AsRef<Path>, model_name: &str) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        if dir.join(MANIFEST).exists() {
            return Err(StoreError::Exists(dir));
        }
        std::fs::create_dir_all(&dir)?;
        let manifest = StoreManifest {
            format_version: FORMAT_VERSION,
            model_name: model_name.to_string(),
            dimensionality: 0,
            layers: Vec::new(),
            record_count: BTreeMap::new(),
        };
        let store = Self { dir, manifest };
        store.commit_manifest(&store.manifest)?;
        Ok(store)
    }

    /// Opens an existing store and verifies that the data files cover the
    /// committed counts.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let text = std::fs::read_to_string(dir.join(MANIFEST))?;
        let manifest: StoreManifest =
            serde_json::from_str(&text).map_err(|e| StoreError::Integrity(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(StoreError::Integrity(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let keys: Vec<u32> = manifest.record_count.keys().copied().collect();
        if keys != manifest.layers {
            return Err(StoreError::Integrity("manifest layer list disagrees with counts".into()));
        }
        let store = Self { dir, manifest };
        for &layer in &store.manifest.layers {
            store.check_layer(layer)?;
        }
        Ok(store)
    }

    pub fn open_or_create(dir: impl AsRef<Path>, model_name: &str) -> Result<Self, StoreError> {
        if dir.as_ref().join(MANIFEST).exists() {
            Self::open(dir)
        } else {
            Self::create(dir, model_name)
        }
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn data_path(&self, layer: u32) -> PathBuf {
        self.dir.join(format!("layer-{layer}.f32"))
    }

    fn index_path(&self, layer: u32) -> PathBuf {
        self.dir.join(format!("layer-{layer}.idx"))
    }

    fn vector_bytes(&self) -> u64 {
        self.manifest.dimensionality as u64 * 4
    }

    fn check_layer(&self, layer: u32) -> Result<(), StoreError> {
        let count = self.manifest.records_in(layer);
        let data_len = std::fs::metadata(self.data_path(layer)).map(|m| m.len()).unwrap_or(0);
        if data_len < count * self.vector_bytes() {
            return Err(StoreError::Integrity(format!(
                "layer {layer} data holds {data_len} bytes, manifest commits {count} vectors"
            )));
        }
        let lines = self.committed_index_len(layer)?;
        if lines.0 < count {
            return Err(StoreError::Integrity(format!(
                "layer {layer} index holds {} entries, manifest commits {count}",
                lines.0
            )));
        }
        Ok(())
    }

    /// Returns (complete lines up to the committed count, their byte length).
    fn committed_index_len(&self, layer: u32) -> Result<(u64, u64), StoreError> {
        let count = self.manifest.records_in(layer);
        let file = match File::open(self.index_path(layer)) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((0, 0)),
            Err(e) => return Err(e.into()),
        };
        let mut reader = BufReader::new(file);
        let mut lines = 0;
        let mut bytes = 0;
        let mut buf = Vec::new();
        while lines < count {
            buf.clear();
            let n = reader.read_until(b'\n', &mut buf)?;
            if n == 0 || buf.last() != Some(&b'\n') {
                break;
            }
            lines += 1;
            bytes += n as u64;
        }
        Ok((lines, bytes))
    }

    /// Drops bytes left behind by a batch that never committed.
    fn discard_uncommitted(&self, layer: u32) -> Result<(), StoreError> {
        let count = self.manifest.records_in(layer);
        let data = self.data_path(layer);
        if data.exists() {
            let f = OpenOptions::new().write(true).open(&data)?;
            if f.metadata()?.len() > count * self.vector_bytes() {
                f.set_len(count * self.vector_bytes())?;
            }
        }
        let index = self.index_path(layer);
        if index.exists() {
            let (_, bytes) = self.committed_index_len(layer)?;
            let f = OpenOptions::new().write(true).open(&index)?;
            if f.metadata()?.len() > bytes {
                f.set_len(bytes)?;
            }
        }
        Ok(())
    }

    fn commit_manifest(&self, manifest: &StoreManifest) -> Result<(), StoreError> {
        let tmp = self.dir.join(format!("{MANIFEST}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(serde_json::to_string_pretty(manifest).expect("manifest serializes").as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, self.dir.join(MANIFEST))?;
        Ok(())
    }

    /// Appends one batch. Either every record is committed or none is.
    pub fn append_records(&mut self, records: &[EmbeddingRecord]) -> Result<&StoreManifest, StoreError> {
        if records.is_empty() {
            return Ok(&self.manifest);
        }
        let dim = if self.manifest.dimensionality == 0 {
            records[0].vector.len()
        } else {
            self.manifest.dimensionality
        };
        if dim == 0 {
            return Err(StoreError::Dimensionality { index: 0, found: 0, expected: 1 });
        }
        for (index, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(StoreError::Dimensionality {
                    index,
                    found: r.vector.len(),
                    expected: dim,
                });
            }
        }

        let mut next = self.manifest.clone();
        next.dimensionality = dim;
        let vector_bytes = dim as u64 * 4;

        let mut by_layer: BTreeMap<u32, Vec<&EmbeddingRecord>> = BTreeMap::new();
        for r in records {
            by_layer.entry(r.layer).or_default().push(r);
        }
        for (&layer, batch) in &by_layer {
            self.discard_uncommitted(layer)?;
            let start = self.manifest.records_in(layer);
            let mut data = OpenOptions::new().create(true).append(true).open(self.data_path(layer))?;
            let mut index = OpenOptions::new().create(true).append(true).open(self.index_path(layer))?;
            let mut data_buf = Vec::with_capacity(batch.len() * dim * 4);
            let mut index_buf = Vec::new();
            for (i, r) in batch.iter().enumerate() {
                for x in &r.vector {
                    data_buf.extend_from_slice(&x.to_le_bytes());
                }
                let entry = IndexEntry {
                    word: r.word.to_lowercase(),
                    context_id: r.context_id.clone(),
                    offset: (start + i as u64) * vector_bytes,
                };
                serde_json::to_writer(&mut index_buf, &entry).expect("index entry serializes");
                index_buf.push(b'\n');
            }
            data.write_all(&data_buf)?;
            index.write_all(&index_buf)?;
            data.sync_all()?;
            index.sync_all()?;
            *next.record_count.entry(layer).or_insert(0) += batch.len() as u64;
        }
        next.layers = next.record_count.keys().copied().collect();
        self.commit_manifest(&next)?;
        self.manifest = next;
        Ok(&self.manifest)
    }

    /// Committed records of one layer in append order.
    pub fn records(&self, layer: u32) -> Result<Vec<EmbeddingRecord>, StoreError> {
        let count = self.require_layer(layer)?;
        let dim = self.manifest.dimensionality;
        let mut data = Vec::new();
        File::open(self.data_path(layer))?
            .take(count * self.vector_bytes())
            .read_to_end(&mut data)?;
        if (data.len() as u64) < count * self.vector_bytes() {
            return Err(StoreError::Integrity(format!("layer {layer} data truncated")));
        }
        let reader = BufReader::new(File::open(self.index_path(layer))?);
        let mut out = Vec::with_capacity(count as usize);
        for line in reader.lines().take(count as usize) {
            let entry: IndexEntry = serde_json::from_str(&line?)
                .map_err(|e| StoreError::Integrity(format!("layer {layer} index: {e}")))?;
            let start = entry.offset as usize;
            let end = start + dim * 4;
            if end > data.len() || !entry.offset.is_multiple_of(dim as u64 * 4) {
                return Err(StoreError::Integrity(format!(
                    "layer {layer} index offset {} out of range",
                    entry.offset
                )));
            }
            let vector = data[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            out.push(EmbeddingRecord {
                word: entry.word,
                context_id: entry.context_id,
                layer,
                vector,
            });
        }
        if out.len() as u64 != count {
            return Err(StoreError::Integrity(format!("layer {layer} index truncated")));
        }
        Ok(out)
    }

    fn require_layer(&self, layer: u32) -> Result<u64, StoreError> {
        self.manifest
            .record_count
            .get(&layer)
            .copied()
            .ok_or_else(|| StoreError::UnknownLayer {
                layer,
                available: self.manifest.layers.clone(),
            })
    }

    /// Per-word mean vectors for one layer, sorted by word.
    pub fn aggregate(&self, layer: u32) -> Result<Vec<WordAggregate>, StoreError> {
        let records = self.records(layer)?;
        Ok(aggregate_records(layer, records.iter().filter(|r| r.layer == layer)))
    }
}

/// Groups records by case-folded word and averages them with f64 accumulation.
pub fn aggregate_records<'a>(layer: u32, records: impl IntoIterator<Item = &'a EmbeddingRecord>) -> Vec<WordAggregate> {
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let (sum, count) = sums
            .entry(r.word.to_lowercase())
            .or_insert_with(|| (vec![0.0; r.vector.len()], 0));
        for (s, x) in sum.iter_mut().zip(&r.vector) {
            *s += f64::from(*x);
        }
        *count += 1;
    }
    sums.into_iter()
        .map(|(word, (sum, count))| WordAggregate {
            word,
            layer,
            mean_vector: sum.into_iter().map(|s| s / count as f64).collect(),
            context_count: count,
        })
        .collect()
}

/// Reads ingestion-format JSONL (one record object per line). Blank lines are skipped.
pub fn read_jsonl(reader: impl BufRead) -> impl Iterator<Item = Result<EmbeddingRecord, StoreError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(StoreError::Io(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str::<EmbeddingRecord>(&line).map_err(|e| StoreError::Ingest {
                line: i + 1,
                message: e.to_string(),
            }),
        )
    })
}

/// Ingests a JSONL stream in batches of `batch_size`; returns the record count.
pub fn ingest_jsonl(store: &mut EmbeddingStore, reader: impl BufRead, batch_size: usize) -> Result<u64, StoreError> {
    let batch_size = batch_size.max(1);
    let mut batch = Vec::with_capacity(batch_size);
    let mut total = 0;
    for record in read_jsonl(reader) {
        batch.push(record?);
        if batch.len() == batch_size {
            store.append_records(&batch)?;
            total += batch.len() as u64;
            batch.clear();
        }
    }
    if !batch.is_empty() {
        store.append_records(&batch)?;
        total += batch.len() as u64;
    }
    Ok(total)
}

/// Joins aggregates with norm targets; rows are sorted by word.
pub fn build_training_pairs(aggregates: &[WordAggregate], space: &NormSpace) -> Result<Dataset, StoreError> {
    let mut rows: Vec<(String, Vec<f64>, Vec<f64>)> = aggregates
        .iter()
        .filter_map(|a| {
            let word = a.word.to_lowercase();
            space
                .get(&word)
                .map(|target| (word, a.mean_vector.clone(), target.to_vec()))
        })
        .collect();
    if rows.is_empty() {
        return Err(StoreError::EmptyIntersection {
            aggregates: aggregates.len(),
            norms: space.len(),
        });
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    rows.dedup_by(|a, b| a.0 == b.0);
    let mut words = Vec::with_capacity(rows.len());
    let mut inputs = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    for (w, x, y) in rows {
        words.push(w);
        inputs.push(x);
        targets.push(y);
    }
    Ok(Dataset::new(words, inputs, targets)?)
}
