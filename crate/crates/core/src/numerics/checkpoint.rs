//! Single-file checkpoint container.
//!
//! Layout: one JSON manifest line (format version, caller metadata, and a
//! `{name, rows, cols, offset}` table), then the parameters as little-endian
//! 32-bit floats in manifest order. Loading validates the byte budget before
//! touching any parameter, so a truncated file never yields partial state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::matrix::Matrix;
use super::real::Real;
use super::store::ParamStore;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("missing manifest line")]
    MissingManifest,
    #[error("unsupported checkpoint format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated: parameter table needs {expected} payload bytes, file has {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("parameter `{name}`: manifest offset {found} does not match expected {expected}")]
    BadOffset { name: String, found: u64, expected: u64 },
    #[error("parameter `{name}`: shape {found_rows}x{found_cols} does not match expected {rows}x{cols}")]
    ShapeMismatch {
        name: String,
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint has unexpected parameter `{0}`")]
    UnexpectedParam(String),
}

#[derive(Serialize, Deserialize)]
struct Manifest<M> {
    format_version: u32,
    meta: M,
    params: Vec<ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

/// Writes every parameter of `store` (name order) after a manifest that
/// echoes `meta`.
pub fn save<R: Real, M: Serialize>(
    path: &Path,
    store: &ParamStore<R>,
    meta: &M,
) -> Result<(), CheckpointError> {
    let mut records = Vec::with_capacity(store.len());
    let mut offset = 0u64;
    for name in store.names() {
        let value = store.param(name);
        records.push(ParamRecord {
            name: name.to_string(),
            rows: value.rows(),
            cols: value.cols(),
            offset,
        });
        offset += (value.len() * 4) as u64;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        meta,
        params: records,
    };
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut writer, &manifest)?;
    writer.write_all(b"\n")?;
    for name in store.names() {
        for v in store.param(name).to_f32_vec() {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads a checkpoint back into a fresh [`ParamStore`] plus the caller
/// metadata embedded in the manifest.
pub fn load<R: Real, M: DeserializeOwned>(
    path: &Path,
) -> Result<(ParamStore<R>, M), CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;

    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(CheckpointError::MissingManifest)?;
    let manifest: Manifest<M> = serde_json::from_slice(&bytes[..newline])?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: manifest.format_version,
        });
    }

    let payload = &bytes[newline + 1..];
    let mut expected = 0u64;
    for record in &manifest.params {
        if record.offset != expected {
            return Err(CheckpointError::BadOffset {
                name: record.name.clone(),
                found: record.offset,
                expected,
            });
        }
        expected += (record.rows * record.cols * 4) as u64;
    }
    if payload.len() as u64 != expected {
        return Err(CheckpointError::Truncated {
            expected,
            actual: payload.len() as u64,
        });
    }

    let mut store = ParamStore::new();
    for record in &manifest.params {
        let count = record.rows * record.cols;
        let start = record.offset as usize;
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let chunk = &payload[start + 4 * i..start + 4 * i + 4];
            values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        store.insert(
            record.name.clone(),
            Matrix::<R>::from_f32_slice(record.rows, record.cols, &values),
        );
    }
    Ok((store, manifest.meta))
}

/// Checks a loaded store against the shape table the caller derived from its
/// configuration; errors name the offending parameter.
pub fn verify_shapes<R: Real>(
    store: &ParamStore<R>,
    expected: &[(String, usize, usize)],
) -> Result<(), CheckpointError> {
    for (name, rows, cols) in expected {
        match store.try_param(name) {
            None => return Err(CheckpointError::MissingParam(name.clone())),
            Some(value) => {
                if value.shape() != (*rows, *cols) {
                    return Err(CheckpointError::ShapeMismatch {
                        name: name.clone(),
                        rows: *rows,
                        cols: *cols,
                        found_rows: value.rows(),
                        found_cols: value.cols(),
                    });
                }
            }
        }
    }
    for name in store.names() {
        if !expected.iter().any(|(n, _, _)| n == name) {
            return Err(CheckpointError::UnexpectedParam(name.to_string()));
        }
    }
    Ok(())
}
