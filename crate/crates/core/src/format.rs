//! EMB1 embedding files, their JSON manifests, and `pairs.json` pairing files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | offset | size      | contents                         |
//! |--------|-----------|----------------------------------|
//! | 0      | 4         | ASCII `EMB1`                     |
//! | 4      | 4         | `u32` row count `N`              |
//! | 8      | 4         | `u32` dimension `d`              |
//! | 12     | `4·N·d`   | `f32` values, row-major          |
//!
//! The sidecar manifest sits next to the binary file with the extension replaced by
//! `.manifest.json`, e.g. `photos.emb` → `photos.manifest.json`, and holds
//! `{"ids": [...], "modality": "photo"|"sketch", "normalized": bool}`.
//!
//! Values are held as `f64` in memory and written as `f32`, so `load(save(m)) == m`
//! holds bit-exactly whenever every entry of `m` is representable as an `f32`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, Modality, Pairing};
use crate::error::{ContractError, FormatError};

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub ids: Vec<String>,
    pub modality: Modality,
    pub normalized: bool,
}

/// Path of the manifest that accompanies the EMB1 file at `path`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Encodes the binary part of an EMB1 file.
pub fn encode_emb1(matrix: &EmbeddingMatrix) -> Result<Vec<u8>, FormatError> {
    let n = u32::try_from(matrix.len()).map_err(|_| ContractError::Invalid("too many rows for EMB1".into()))?;
    let d = u32::try_from(matrix.dim()).map_err(|_| ContractError::Invalid("dimension too large for EMB1".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.data().len() * 4);
    out.extend_from_slice(&EMB1_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for (pos, &x) in matrix.data().iter().enumerate() {
        let v = x as f32;
        if !v.is_finite() {
            return Err(ContractError::NonFinite {
                row: pos / matrix.dim(),
                col: pos % matrix.dim(),
            }
            .into());
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes the binary part of an EMB1 file into `(rows, dim, values)`.
pub fn decode_emb1(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4-byte slice");
    if magic != EMB1_MAGIC {
        return Err(FormatError::BadMagic {
            found: magic,
            expected: EMB1_MAGIC,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4-byte slice")) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4-byte slice")) as usize;
    if d == 0 {
        return Err(FormatError::ZeroDimension);
    }
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or(FormatError::Truncated {
            expected: usize::MAX,
            found: bytes.len(),
        })?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            found: bytes.len() - expected,
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
        .collect();
    Ok((n, d, values))
}

/// Writes `matrix` to `path` in EMB1 format plus its manifest.
pub fn save_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<(), FormatError> {
    let bytes = encode_emb1(matrix)?;
    let manifest = Manifest {
        ids: matrix.ids().to_vec(),
        modality: matrix.modality(),
        normalized: matrix.is_normalized(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, json).map_err(|e| FormatError::io(mpath, e))
}

/// Reads an EMB1 file and its manifest.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let (n, d, values) = decode_emb1(&bytes)?;
    let mpath = manifest_path(path);
    let text = fs::read(&mpath).map_err(|e| FormatError::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|source| FormatError::Json { path: mpath, source })?;
    if manifest.ids.len() != n {
        return Err(FormatError::CountMismatch {
            manifest: manifest.ids.len(),
            header: n,
        });
    }
    let mut seen = HashSet::with_capacity(n);
    for id in &manifest.ids {
        if !seen.insert(id.as_str()) {
            return Err(FormatError::DuplicateId(id.clone()));
        }
    }
    Ok(EmbeddingMatrix::new(
        manifest.ids,
        d,
        values,
        manifest.modality,
        manifest.normalized,
    )?)
}

pub fn save_pairs(pairing: &Pairing, path: &Path) -> Result<(), FormatError> {
    let json = serde_json::to_vec_pretty(pairing.photo_to_sketch()).expect("pairs serialize");
    fs::write(path, json).map_err(|e| FormatError::io(path, e))
}

pub fn load_pairs(path: &Path) -> Result<Pairing, FormatError> {
    let text = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let map: BTreeMap<String, String> = serde_json::from_slice(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Pairing::new(map)?)
}
