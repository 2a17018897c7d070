//! Raw little-endian float payload with a JSON sidecar header.
//!
//! `section.grid` holds `m * n` floats in row-major order and
//! `section.grid.json` describes them:
//!
//! ```json
//! {
//!   "m": 200,
//!   "n": 51,
//!   "dtype": "f64",
//!   "sample_interval": 0.002,
//!   "axis_unit": "time",
//!   "provenance": ["wedge-gen: ..."],
//!   "checksum": 1234567890
//! }
//! ```
//!
//! `checksum` is the CRC-32 of the payload bytes.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AxisUnit, SeismicSection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub m: usize,
    pub n: usize,
    pub dtype: Dtype,
    pub sample_interval: f64,
    pub axis_unit: AxisUnit,
    pub provenance: Vec<String>,
    pub checksum: u32,
}

/// Path of the header belonging to a payload path.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    let mut name = payload.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_payload(data: &Array2<f64>, dtype: Dtype) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(data.len() * dtype.size());
    for &v in data.iter() {
        match dtype {
            Dtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    bytes
}

fn decode_payload(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

pub fn write_grid(path: &Path, section: &SeismicSection, dtype: Dtype) -> Result<()> {
    let payload = encode_payload(section.data(), dtype);
    let (m, n) = section.dim();
    let header = GridHeader {
        m,
        n,
        dtype,
        sample_interval: section.sample_interval,
        axis_unit: section.axis_unit,
        provenance: section.provenance.clone(),
        checksum: crc32fast::hash(&payload),
    };
    let mut text = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::Format(format!("header encoding: {e}")))?;
    text.push('\n');
    fs::write(path, &payload)?;
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<GridHeader> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))
}

pub fn read_grid(path: &Path) -> Result<SeismicSection> {
    let header = read_header(path)?;
    let payload = fs::read(path)?;
    let actual = crc32fast::hash(&payload);
    if actual != header.checksum {
        return Err(Error::Checksum {
            expected: header.checksum,
            actual,
        });
    }
    let expected_len = header.m * header.n * header.dtype.size();
    if payload.len() != expected_len {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {expected_len}",
            payload.len()
        )));
    }
    let data = Array2::from_shape_vec((header.m, header.n), decode_payload(&payload, header.dtype))
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut section = SeismicSection::new(data, header.sample_interval, header.axis_unit)?;
    section.provenance = header.provenance;
    Ok(section)
}
