//! On-disk grid container.
//!
//! A grid named `foo` is stored as `foo.vol` (raw little-endian payload,
//! row-major) next to a UTF-8 JSON sidecar `foo.json`:
//!
//! ```json
//! {"dims": [d, h, w], "classes": 2, "spacing": [sz, sy, sx], "dtype": "f64"}
//! ```
//!
//! Real-valued volumes use `dtype = "f64"`; label maps and binary masks use
//! `dtype = "u8"`. `classes` and `spacing` are optional.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Dims, LabelMap, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<[f64; 3]>,
    pub dtype: Dtype,
}

/// Path of the binary payload for a container path (`.vol` enforced).
pub fn payload_path(path: &Path) -> PathBuf {
    path.with_extension("vol")
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_container(path: &Path, sidecar: &Sidecar, payload: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(sidecar_path(path), serde_json::to_vec(sidecar)?)?;
    fs::write(payload_path(path), payload)?;
    Ok(())
}

fn read_container(path: &Path, expected: Dtype) -> Result<(Sidecar, Dims, Vec<u8>)> {
    let side_path = sidecar_path(path);
    let data_path = payload_path(path);
    for p in [&side_path, &data_path] {
        if !p.exists() {
            return Err(Error::MissingData(format!("{} not found", p.display())));
        }
    }
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(&side_path)?)?;
    if sidecar.dtype != expected {
        return Err(Error::Format(format!(
            "{}: dtype {:?}, expected {:?}",
            side_path.display(),
            sidecar.dtype,
            expected
        )));
    }
    let dims = Dims::from_array(sidecar.dims)?;
    let payload = fs::read(&data_path)?;
    let expected_len = dims.len() * expected.width();
    if payload.len() != expected_len {
        return Err(Error::LengthMismatch {
            expected: expected_len,
            actual: payload.len(),
        });
    }
    Ok((sidecar, dims, payload))
}

pub(crate) fn encode_f64(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    let sidecar = Sidecar {
        dims: v.dims().as_array(),
        classes: None,
        spacing: v.spacing(),
        dtype: Dtype::F64,
    };
    write_container(path, &sidecar, &encode_f64(v.data()))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (sidecar, dims, payload) = read_container(path, Dtype::F64)?;
    let mut v = Volume::new(dims, decode_f64(&payload))?;
    if let Some(s) = sidecar.spacing {
        v = v.with_spacing(s)?;
    }
    Ok(v)
}

pub fn write_labels(l: &LabelMap, path: &Path) -> Result<()> {
    let sidecar = Sidecar {
        dims: l.dims().as_array(),
        classes: Some(l.classes()),
        spacing: None,
        dtype: Dtype::U8,
    };
    write_container(path, &sidecar, l.data())
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let (sidecar, dims, payload) = read_container(path, Dtype::U8)?;
    let classes = sidecar
        .classes
        .ok_or_else(|| Error::Format(format!("{}: label map without classes", path.display())))?;
    LabelMap::new(dims, classes, payload)
}

pub fn write_mask(m: &BinaryMask, path: &Path) -> Result<()> {
    let sidecar = Sidecar {
        dims: m.dims().as_array(),
        classes: Some(2),
        spacing: None,
        dtype: Dtype::U8,
    };
    write_container(path, &sidecar, m.data())
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (_, dims, payload) = read_container(path, Dtype::U8)?;
    BinaryMask::new(dims, payload)
}
