//! `.wmxd` payload plus `.manifest.json` sidecar.
//!
//! Payload layout, little-endian: magic `WMXD`, `u32` version, `u64` n_samples,
//! `u64` T, `u64` N, then `n·T·N` `f32` values as `[sample][time][channel]`.

use std::path::{Path, PathBuf};

use super::{Dataset, DatasetManifest};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"WMXD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 3 * 8;

/// `data/foo.wmxd` → `data/foo.manifest.json`.
pub fn manifest_path(payload: &Path) -> PathBuf {
    payload.with_extension("manifest.json")
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    ds.check()?;
    let m = &ds.manifest;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * ds.windows.len());
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for dim in [m.samples.len(), m.seq_len, m.channels.len()] {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for v in &ds.windows {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    crate::report::write_json(&manifest_path(path), m)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "WMXD".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: DATASET_VERSION,
        });
    }
    let dim = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
    let (n, t, c) = (dim(0), dim(1), dim(2));
    let expected = n
        .checked_mul(t)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::ShapeDisagreement(format!("dims {n}×{t}×{c} overflow")))?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::ShapeDisagreement(format!(
            "{} trailing bytes after a {n}×{t}×{c} payload",
            found - expected
        )));
    }

    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let declared = (
        manifest.samples.len() as u64,
        manifest.seq_len as u64,
        manifest.channels.len() as u64,
    );
    if declared != (n, t, c) {
        return Err(Error::ShapeDisagreement(format!(
            "manifest declares n={} T={} N={}, payload holds n={n} T={t} N={c}",
            declared.0, declared.1, declared.2
        )));
    }
    let windows = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Dataset::new(manifest, windows)
}
