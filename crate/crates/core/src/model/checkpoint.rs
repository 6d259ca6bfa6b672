//! Binary checkpoint: magic, version, a JSON header, then the raw parameters.
//!
//! ```text
//! b"SIMTRANS" | u32 version | u64 header length | header JSON | params (LE)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelError, Precision, Real, ScorerModel};
use crate::transition::Vocab;

const MAGIC: &[u8; 8] = b"SIMTRANS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("bad header: {0}")]
    Header(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    precision: Precision,
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorInfo>,
    metadata: serde_json::Value,
}

/// A loaded model in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    F32(ScorerModel<f32>),
    F64(ScorerModel<f64>),
}

impl AnyModel {
    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::F32(m) => m.config(),
            AnyModel::F64(m) => m.config(),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            AnyModel::F32(m) => m.vocab(),
            AnyModel::F64(m) => m.vocab(),
        }
    }

    pub fn cast<T: Real>(&self) -> ScorerModel<T> {
        match self {
            AnyModel::F32(m) => m.cast(),
            AnyModel::F64(m) => m.cast(),
        }
    }
}

pub fn write_checkpoint<T: Real, W: Write>(
    model: &ScorerModel<T>,
    metadata: &serde_json::Value,
    mut out: W,
) -> Result<(), CheckpointError> {
    let precision = match T::BYTES {
        4 => Precision::F32,
        _ => Precision::F64,
    };
    let header = Header {
        precision,
        config: model.config().clone(),
        vocab: model.vocab().clone(),
        tensors: model
            .layout()
            .entries
            .iter()
            .map(|e| TensorInfo { name: e.name.clone(), rows: e.tensor.rows, cols: e.tensor.cols })
            .collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(model.num_params() * T::BYTES);
    for &p in model.params() {
        p.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn read_params<T: Real, R: Read>(header: Header, input: &mut R) -> Result<ScorerModel<T>, CheckpointError> {
    let mut model = ScorerModel::<T>::zeros(header.config, header.vocab)?;
    let entries = &model.layout().entries;
    if entries.len() != header.tensors.len() {
        return Err(CheckpointError::Layout(format!("{} tensors stored, {} expected", header.tensors.len(), entries.len())));
    }
    for (e, t) in entries.iter().zip(&header.tensors) {
        if e.name != t.name || e.tensor.rows != t.rows || e.tensor.cols != t.cols {
            return Err(CheckpointError::Layout(format!(
                "stored {} {}x{}, expected {} {}x{}",
                t.name, t.rows, t.cols, e.name, e.tensor.rows, e.tensor.cols
            )));
        }
    }
    let mut bytes = vec![0u8; model.num_params() * T::BYTES];
    input.read_exact(&mut bytes)?;
    for (p, chunk) in model.params_mut().iter_mut().zip(bytes.chunks_exact(T::BYTES)) {
        *p = T::read_le(chunk);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(CheckpointError::Layout("trailing bytes after parameters".to_string()));
    }
    Ok(model)
}

/// Reads a checkpoint and its metadata.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(AnyModel, serde_json::Value), CheckpointError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let metadata = header.metadata.clone();
    let model = match header.precision {
        Precision::F32 => AnyModel::F32(read_params(header, &mut input)?),
        Precision::F64 => AnyModel::F64(read_params(header, &mut input)?),
    };
    Ok((model, metadata))
}

pub fn save_checkpoint<T: Real>(
    model: &ScorerModel<T>,
    metadata: &serde_json::Value,
    path: &Path,
) -> Result<(), CheckpointError> {
    write_checkpoint(model, metadata, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<(AnyModel, serde_json::Value), CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
