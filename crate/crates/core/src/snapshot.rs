//! Binary field snapshots: a little-endian `(re, im)` f64 payload, row-major
//! with x2 fastest, plus a JSON header with the same stem.

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::geometry::GridSpec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const LAYOUT: &str = "complex128-le-row-major-x2-fastest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
    /// Coordinates of node `(0, 0)`.
    pub origin: [f64; 2],
    pub time: f64,
    pub velocity: f64,
    pub layout: String,
    /// CRC-32 of the payload bytes.
    pub checksum: u32,
    pub config_hash: String,
}

impl SnapshotHeader {
    pub fn new(grid: &GridSpec, time: f64, velocity: f64, config_hash: &str) -> Self {
        Self {
            dims: grid.points,
            spacing: grid.dx(),
            origin: grid.point(0, 0),
            time,
            velocity,
            layout: LAYOUT.into(),
            checksum: 0,
            config_hash: config_hash.into(),
        }
    }

    pub fn payload_len(&self) -> usize {
        self.dims[0] * self.dims[1] * 16
    }
}

fn header_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn encode(field: &ComplexField) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(field.len() * 16);
    for z in field.as_slice() {
        bytes.extend_from_slice(&z.re.to_le_bytes());
        bytes.extend_from_slice(&z.im.to_le_bytes());
    }
    bytes
}

/// Writes `path` (payload) and `path` with a `.json` extension (header). The
/// header's checksum is filled in from the payload.
pub fn write_snapshot(
    field: &ComplexField,
    header: &SnapshotHeader,
    path: &Path,
) -> Result<SnapshotHeader> {
    let (n1, n2) = field.dims();
    if header.dims != [n1, n2] {
        return Err(Error::Snapshot(format!(
            "header dims {:?} do not match field {n1}×{n2}",
            header.dims
        )));
    }
    let payload = encode(field);
    let header = SnapshotHeader {
        checksum: crc32fast::hash(&payload),
        ..header.clone()
    };
    std::fs::write(path, &payload)?;
    std::fs::write(header_path(path), serde_json::to_vec_pretty(&header)?)?;
    Ok(header)
}

pub fn read_snapshot(path: &Path) -> Result<(ComplexField, SnapshotHeader)> {
    let header: SnapshotHeader = serde_json::from_slice(&std::fs::read(header_path(path))?)?;
    let payload = std::fs::read(path)?;
    if payload.len() != header.payload_len() {
        return Err(Error::Snapshot(format!(
            "dim mismatch: {}×{} needs {} bytes, payload has {}",
            header.dims[0],
            header.dims[1],
            header.payload_len(),
            payload.len()
        )));
    }
    let crc = crc32fast::hash(&payload);
    if crc != header.checksum {
        return Err(Error::Snapshot(format!(
            "checksum mismatch: header {:08x}, payload {crc:08x}",
            header.checksum
        )));
    }
    let data = payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    Ok((
        ComplexField::from_vec(header.dims[0], header.dims[1], data),
        header,
    ))
}
