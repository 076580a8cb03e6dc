//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 4            | magic `WMXC`                                        |
//! | 4            | format version (`u32`, currently 1)                 |
//! | 8            | header length `H` (`u64`)                           |
//! | H            | UTF-8 JSON [`CheckpointHeader`]                     |
//! | 4 · numel    | `f32` parameters, tensors in header order, row-major |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::network::WaveletMixer;
use crate::model::params::ParamStore;
use crate::model::schema::ChannelSchema;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WMXC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Why a snapshot was kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Selection {
    pub metric: Option<String>,
    pub value: Option<f64>,
    pub epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub schema: ChannelSchema,
    pub selection: Selection,
    pub parameters: Vec<ParamEntry>,
}

pub fn write_checkpoint<F: Scalar>(
    path: &Path,
    model: &WaveletMixer,
    params: &ParamStore<F>,
    selection: Selection,
) -> Result<()> {
    model.registry.check(params)?;
    let header = CheckpointHeader {
        model: model.config.clone(),
        schema: model.schema.clone(),
        selection,
        parameters: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * params.numel());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint and rebuilds the model it describes.
pub fn read_checkpoint<F: Scalar>(path: &Path) -> Result<(WaveletMixer, ParamStore<F>, Selection)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "WMXC".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(Error::Truncated {
            expected: (16 + hlen) as u64,
            found: bytes.len() as u64,
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])?;
    let payload = &bytes[16 + hlen..];
    let numel: usize = header
        .parameters
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if payload.len() != 4 * numel {
        return Err(Error::Truncated {
            expected: (16 + hlen + 4 * numel) as u64,
            found: bytes.len() as u64,
        });
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| F::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64));
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for entry in &header.parameters {
        let n: usize = entry.shape.iter().product();
        let data: Vec<F> = values.by_ref().take(n).collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
        names.push(entry.name.clone());
    }
    let params = ParamStore::from_parts(names, tensors);
    let model = WaveletMixer::new(header.model, header.schema)?;
    model.registry.check(&params)?;
    Ok((model, params, header.selection))
}
