//! Binary checkpoint: magic, manifest length (u32 LE), JSON manifest, then the
//! raw little-endian parameter payload.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{dtype_width, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COVRESP\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a training run stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    dtype: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    payload_len: u64,
    #[serde(default)]
    state: Option<TrainState>,
}

pub fn write_checkpoint<R: Real>(model: &Model<R>, state: Option<&TrainState>) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
            dtype: R::DTYPE.to_string(),
        });
        R::to_le_bytes_vec(t.data(), &mut payload);
    }
    let manifest = Manifest {
        schema_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        tensors,
        payload_len: payload.len() as u64,
        state: state.cloned(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint {
        offset: 8,
        reason: "manifest too large".into(),
    })?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn bad(offset: usize, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Parses a checkpoint. Tensors stored at another precision are converted.
pub fn read_checkpoint<R: Real>(bytes: &[u8]) -> Result<(Model<R>, Option<TrainState>)> {
    if bytes.len() < 8 {
        return Err(bad(bytes.len(), "truncated before the end of the magic"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad(0, "not a checkpoint (bad magic)"));
    }
    if bytes.len() < 12 {
        return Err(bad(bytes.len(), "truncated inside the manifest length"));
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let pstart = 12 + mlen;
    if bytes.len() < pstart {
        return Err(bad(bytes.len(), format!("truncated inside the {mlen}-byte manifest")));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..pstart])
        .map_err(|e| bad(12 + e.column().saturating_sub(1), format!("manifest: {e}")))?;
    if manifest.schema_version != CHECKPOINT_VERSION {
        return Err(bad(
            12,
            format!(
                "schema_version {} not supported (expected {CHECKPOINT_VERSION})",
                manifest.schema_version
            ),
        ));
    }
    let payload = &bytes[pstart..];
    if (payload.len() as u64) < manifest.payload_len {
        return Err(bad(bytes.len(), format!("truncated payload: {} of {} bytes", payload.len(), manifest.payload_len)));
    }
    if payload.len() as u64 > manifest.payload_len {
        return Err(bad(pstart + manifest.payload_len as usize, "trailing bytes after the payload"));
    }
    manifest.config.validate().map_err(|e| bad(12, e.to_string()))?;
    // fresh model only for the expected names and shapes
    let mut model = Model::<R>::new(manifest.config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    if model.params.len() != manifest.tensors.len() {
        return Err(bad(
            12,
            format!("{} tensors stored, model needs {}", manifest.tensors.len(), model.params.len()),
        ));
    }
    let mut loaded = Vec::with_capacity(manifest.tensors.len());
    for (entry, (name, t)) in manifest.tensors.iter().zip(model.params.iter()) {
        if entry.name != name || entry.shape != t.shape() {
            return Err(bad(
                12,
                format!("tensor {} {:?} does not match expected {name} {:?}", entry.name, entry.shape, t.shape()),
            ));
        }
        let w = dtype_width(&entry.dtype).ok_or_else(|| bad(12, format!("unknown dtype {}", entry.dtype)))?;
        let n: usize = entry.shape.iter().product();
        let lo = entry.offset as usize;
        let hi = lo + n * w;
        if hi > payload.len() {
            return Err(bad(pstart + lo, format!("tensor {name} runs past the payload")));
        }
        let raw = &payload[lo..hi];
        let data: Vec<R> = match entry.dtype.as_str() {
            d if d == R::DTYPE => raw.chunks_exact(w).map(R::from_le_chunk).collect(),
            "f32" => raw.chunks_exact(4).map(|c| R::from_f64_lossy(f32::from_le_chunk(c) as f64)).collect(),
            _ => raw.chunks_exact(8).map(|c| R::from_f64_lossy(f64::from_le_chunk(c))).collect(),
        };
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(bad(pstart + lo + i * w, format!("non-finite value in {name}")));
        }
        loaded.push(Tensor::new(entry.shape.clone(), data)?);
    }
    for (dst, src) in model.params.tensors_mut().iter_mut().zip(loaded) {
        *dst = src;
    }
    Ok((model, manifest.state))
}

pub fn save_checkpoint<R: Real>(model: &Model<R>, state: Option<&TrainState>, path: impl AsRef<Path>) -> Result<()> {
    crate::fsutil::write_atomic(path, &write_checkpoint(model, state)?)
}

pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<(Model<R>, Option<TrainState>)> {
    let p = path.as_ref();
    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
    read_checkpoint(&bytes)
}
