//! Model persistence.
//!
//! File layout, bit-exact:
//!
//! ```text
//! "TACNET1"                       7 magic bytes
//! header length                   4 bytes, little-endian u32
//! header                          UTF-8 JSON (see [`Header`])
//! payload                         raw little-endian f32 tensor data,
//!                                 in header directory order
//! ```
//!
//! The header lists the format version, window geometry, frontend and
//! classifier structure, and a tensor directory of `(name, shape, dtype,
//! byte offset)`. Offsets are relative to the start of the payload and
//! contiguous; every tensor's `product(shape) * 4` bytes must match its
//! directory extent. `load(save(model))` is bitwise identical.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::CompactCnnConfig;
use crate::frontend::FrontendConfig;
use crate::signal::WindowConfig;

use super::CountingModel;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"TACNET1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("header parse failed: {0}")]
    HeaderParse(String),
    #[error("truncated payload: need {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("payload has {actual} bytes but the directory covers {expected}")]
    OversizedPayload { expected: usize, actual: usize },
    #[error("tensor {name}: {detail}")]
    TensorMismatch { name: String, detail: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    window: WindowConfig,
    frontend: FrontendConfig,
    classifier: CompactCnnConfig,
    tensors: Vec<TensorEntry>,
}

fn tensor_shapes(model: &CountingModel<f32>) -> HashMap<String, Vec<usize>> {
    let n = model.frontend.n_filters();
    let mut shapes: HashMap<String, Vec<usize>> = [
        "gabor.center_freq",
        "gabor.width",
        "pool.width",
        "pcen.gain",
        "pcen.bias",
        "pcen.root",
    ]
    .into_iter()
    .map(|name| (name.to_string(), vec![n]))
    .collect();
    shapes.extend(model.classifier.tensor_shapes());
    shapes
}

/// Structural frontend config recovered from a model (band edges and the
/// initial pooling width are init-time-only and already baked into the
/// tensors; they are stored for reference).
fn frontend_config_of(model: &CountingModel<f32>, original: Option<&FrontendConfig>) -> FrontendConfig {
    let defaults = FrontendConfig::default();
    let base = original.unwrap_or(&defaults);
    FrontendConfig {
        n_filters: model.frontend.n_filters(),
        kernel_width: model.frontend.kernel_width,
        pool_stride: model.frontend.pooling.stride,
        pool_kernel_width: model.frontend.pooling.kernel_width,
        init_pool_width: base.init_pool_width,
        pcen_smooth: model.frontend.pcen.smooth as f64,
        pcen_floor: model.frontend.pcen.floor as f64,
        f_min_hz: base.f_min_hz,
        f_max_hz: base.f_max_hz,
    }
}

/// Writes the model to `path` in checkpoint format.
pub fn save_checkpoint(model: &CountingModel<f32>, path: &Path) -> Result<(), CheckpointError> {
    let shapes = tensor_shapes(model);
    let tensors = model.tensors();
    let mut directory = Vec::with_capacity(tensors.len());
    let mut offset = 0usize;
    for (name, data) in &tensors {
        let shape = shapes
            .get(name)
            .cloned()
            .unwrap_or_else(|| vec![data.len()]);
        directory.push(TensorEntry {
            name: name.clone(),
            shape,
            dtype: "f32".into(),
            offset,
        });
        offset += data.len() * 4;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        window: model.window,
        frontend: frontend_config_of(model, None),
        classifier: model.classifier.config().clone(),
        tensors: directory,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::HeaderParse(e.to_string()))?;

    let mut file = fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    let mut payload = Vec::with_capacity(offset);
    for (_, data) in &tensors {
        for v in data.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&payload)?;
    file.flush()?;
    Ok(())
}

/// Reads a checkpoint back into a model; validates magic, version, and the
/// tensor directory against the reconstructed parameter set.
pub fn load_checkpoint(path: &Path) -> Result<CountingModel<f32>, CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 {
        return Err(CheckpointError::BadMagic);
    }
    if &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_start = CHECKPOINT_MAGIC.len() + 4;
    let header_len = u32::from_le_bytes(
        bytes[CHECKPOINT_MAGIC.len()..header_start]
            .try_into()
            .expect("4 bytes"),
    ) as usize;
    if bytes.len() < header_start + header_len {
        return Err(CheckpointError::TruncatedPayload {
            expected: header_start + header_len,
            actual: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[header_start..header_start + header_len])
        .map_err(|e| CheckpointError::HeaderParse(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(header.format_version));
    }

    let mut model =
        CountingModel::<f32>::new(header.window, &header.frontend, header.classifier.clone(), 0)
            .map_err(|e| CheckpointError::HeaderParse(e.to_string()))?;

    // Validate directory consistency before touching the payload.
    let payload = &bytes[header_start + header_len..];
    let mut running = 0usize;
    for entry in &header.tensors {
        if entry.dtype != "f32" {
            return Err(CheckpointError::TensorMismatch {
                name: entry.name.clone(),
                detail: format!("unsupported dtype {}", entry.dtype),
            });
        }
        if entry.offset != running {
            return Err(CheckpointError::TensorMismatch {
                name: entry.name.clone(),
                detail: format!("offset {} does not match running {}", entry.offset, running),
            });
        }
        running += entry.shape.iter().product::<usize>() * 4;
    }
    if payload.len() < running {
        return Err(CheckpointError::TruncatedPayload {
            expected: running,
            actual: payload.len(),
        });
    }
    if payload.len() > running {
        return Err(CheckpointError::OversizedPayload {
            expected: running,
            actual: payload.len(),
        });
    }

    let expected_names: Vec<String> = model.tensors().iter().map(|(n, _)| n.clone()).collect();
    let seen: Vec<String> = header.tensors.iter().map(|t| t.name.clone()).collect();
    if expected_names != seen {
        return Err(CheckpointError::TensorMismatch {
            name: "<directory>".into(),
            detail: format!("tensor set mismatch: expected {expected_names:?}, got {seen:?}"),
        });
    }

    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let mut tensors = model.tensors_mut();
        let (_, dest) = tensors
            .iter_mut()
            .find(|(n, _)| n == &entry.name)
            .expect("validated above");
        if dest.len() != numel {
            return Err(CheckpointError::TensorMismatch {
                name: entry.name.clone(),
                detail: format!("shape {:?} != parameter length {}", entry.shape, dest.len()),
            });
        }
        for (i, v) in dest.iter_mut().enumerate() {
            let at = entry.offset + i * 4;
            *v = f32::from_le_bytes(payload[at..at + 4].try_into().expect("4 bytes"));
        }
    }
    Ok(model)
}
