//! Model file container.
//!
//! ```text
//! b"FSPROJ\0\0"          8-byte magic
//! u64 (LE)               header length in bytes
//! header                 UTF-8 JSON: version, config, metadata, payload length, sha256
//! payload                little-endian f32 blocks W1, b1, W2, b2
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{MlpConfig, MlpError, ModelMetadata, Params, ProjectorModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FSPROJ\0\0";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("model file I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a projector model file")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid model header: {0}")]
    Header(String),
    #[error("weight checksum mismatch (file truncated or corrupted)")]
    Checksum,
    #[error(transparent)]
    Model(#[from] MlpError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: MlpConfig,
    metadata: ModelMetadata,
    blocks: Vec<String>,
    payload_bytes: u64,
    sha256: String,
}

fn payload(params: &Params) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 4);
    for block in params.blocks() {
        for w in block {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_model<W: Write>(model: &ProjectorModel, mut out: W) -> Result<(), ModelFileError> {
    let body = payload(model.params());
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        config: model.config().clone(),
        metadata: model.metadata().clone(),
        blocks: ["W1", "b1", "W2", "b2"].map(String::from).to_vec(),
        payload_bytes: body.len() as u64,
        sha256: hex::encode(Sha256::digest(&body)),
    };
    let header = serde_json::to_vec(&header).map_err(|e| ModelFileError::Header(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&body)?;
    out.flush()?;
    Ok(())
}

pub fn save_model(model: &ProjectorModel, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_model(model, &mut f)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<ProjectorModel, ModelFileError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| ModelFileError::Header("header extends past end of file".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| ModelFileError::Header(e.to_string()))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(ModelFileError::Version {
            found: header.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let body = &bytes[header_end..];
    if body.len() as u64 != header.payload_bytes || hex::encode(Sha256::digest(body)) != header.sha256 {
        return Err(ModelFileError::Checksum);
    }

    let cfg = &header.config;
    let mut params = Params::zeros(cfg.input_dim, cfg.hidden_size, cfg.output_dim);
    if body.len() != params.len() * 4 {
        return Err(ModelFileError::Header(format!(
            "payload holds {} values, config implies {}",
            body.len() / 4,
            params.len()
        )));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    for block in params.blocks_mut() {
        for w in block.iter_mut() {
            *w = values.next().expect("length checked");
        }
    }
    Ok(ProjectorModel::new(header.config, params, header.metadata)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ProjectorModel, ModelFileError> {
    read_model(std::fs::File::open(path)?)
}
