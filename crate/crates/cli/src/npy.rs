//! Minimal NPY v1.0 tensor file support.
//!
//! The pipeline exchanges tensors as NPY version 1.0: little-endian, C
//! (row-major) order, 1 to 3 dimensions. Readers accept `<f4`, `<f8`,
//! `<i4`, and `<i8` payloads (widened to `f64`/`i64`); writers emit `<f8`
//! for floats and `<i8` for integers. Fortran-ordered files are rejected.
//! Headers are padded to a multiple of 64 bytes, matching what NumPy
//! itself writes, so files round-trip bit-exactly with NumPy.

use crate::error::{CliError, Result};
use crate::fsio::atomic_write;
use std::path::Path;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// Tensor payload: floats widen to f64, integers to i64.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

/// An in-memory tensor with row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Float payload, or a validation error naming the file.
    pub fn as_f64(&self, path: &Path) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            TensorData::I64(_) => Err(CliError::validation(format!(
                "{}: expected a float tensor, found an integer one",
                path.display()
            ))),
        }
    }

    /// Integer payload, or a validation error naming the file.
    pub fn as_i64(&self, path: &Path) -> Result<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Ok(v),
            TensorData::F64(_) => Err(CliError::validation(format!(
                "{}: expected an integer tensor, found a float one",
                path.display()
            ))),
        }
    }
}

fn header_dict(descr: &str, shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let tuple = match dims.len() {
        1 => format!("({},)", dims[0]),
        _ => format!("({})", dims.join(", ")),
    };
    format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {tuple}, }}")
}

fn encode(descr: &str, element_size: usize, shape: &[usize], payload: impl Fn(&mut Vec<u8>)) -> Vec<u8> {
    let dict = header_dict(descr, shape);
    // magic(6) + version(2) + header_len(2) + header, padded to 64 bytes.
    let unpadded = 10 + dict.len() + 1; // trailing newline
    let padded = unpadded.div_ceil(ALIGN) * ALIGN;
    let header_len = padded - 10;
    let count: usize = shape.iter().product();
    let mut out = Vec::with_capacity(padded + count * element_size);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(padded - 1, b' ');
    out.push(b'\n');
    payload(&mut out);
    out
}

/// Serializes a float tensor as NPY v1.0 `<f8`.
pub fn encode_f64(shape: &[usize], data: &[f64]) -> Vec<u8> {
    assert_eq!(
        shape.iter().product::<usize>(),
        data.len(),
        "tensor shape does not match buffer length"
    );
    encode("<f8", 8, shape, |out| {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    })
}

/// Serializes an integer tensor as NPY v1.0 `<i8`.
pub fn encode_i64(shape: &[usize], data: &[i64]) -> Vec<u8> {
    assert_eq!(
        shape.iter().product::<usize>(),
        data.len(),
        "tensor shape does not match buffer length"
    );
    encode("<i8", 8, shape, |out| {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    })
}

/// Writes a float tensor atomically.
pub fn write_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    atomic_write(path, &encode_f64(shape, data))
}

/// Writes an integer tensor atomically.
pub fn write_i64(path: &Path, shape: &[usize], data: &[i64]) -> Result<()> {
    atomic_write(path, &encode_i64(shape, data))
}

fn bad(path: &Path, detail: impl std::fmt::Display) -> CliError {
    CliError::validation(format!("{}: {detail}", path.display()))
}

/// Extracts the quoted value after `key` in the header dict.
fn dict_str(header: &str, key: &str, path: &Path) -> Result<String> {
    let needle = format!("'{key}':");
    let at = header
        .find(&needle)
        .ok_or_else(|| bad(path, format!("NPY header lacks '{key}'")))?;
    let rest = &header[at + needle.len()..];
    let open = rest
        .find('\'')
        .ok_or_else(|| bad(path, format!("unquoted '{key}' in NPY header")))?;
    let rest = &rest[open + 1..];
    let close = rest
        .find('\'')
        .ok_or_else(|| bad(path, format!("unterminated '{key}' in NPY header")))?;
    Ok(rest[..close].to_string())
}

fn dict_raw<'h>(header: &'h str, key: &str, path: &Path) -> Result<&'h str> {
    let needle = format!("'{key}':");
    let at = header
        .find(&needle)
        .ok_or_else(|| bad(path, format!("NPY header lacks '{key}'")))?;
    Ok(header[at + needle.len()..].trim_start())
}

/// Parses NPY v1.0 bytes into a tensor.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad(path, "not an NPY file (bad magic)"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(bad(
            path,
            format!("unsupported NPY version {}.{} (only 1.0)", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(bad(path, "truncated NPY header"));
    }
    let header = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| bad(path, "NPY header is not valid UTF-8"))?;

    let descr = dict_str(header, "descr", path)?;
    let fortran = dict_raw(header, "fortran_order", path)?;
    if fortran.starts_with("True") {
        return Err(bad(path, "Fortran-ordered tensors are not supported"));
    }
    if !fortran.starts_with("False") {
        return Err(bad(path, "unparseable 'fortran_order' in NPY header"));
    }
    let shape_raw = dict_raw(header, "shape", path)?;
    if !shape_raw.starts_with('(') {
        return Err(bad(path, "unparseable 'shape' in NPY header"));
    }
    let close = shape_raw
        .find(')')
        .ok_or_else(|| bad(path, "unterminated 'shape' in NPY header"))?;
    let mut shape = Vec::new();
    for piece in shape_raw[1..close].split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let dim: usize = piece
            .parse()
            .map_err(|_| bad(path, format!("bad shape dimension `{piece}`")))?;
        shape.push(dim);
    }
    if shape.is_empty() || shape.len() > 3 {
        return Err(bad(
            path,
            format!("{} dimensions; this pipeline handles 1 to 3", shape.len()),
        ));
    }
    let count: usize = shape.iter().product();
    let payload = &bytes[data_start..];

    let element = |size: usize| -> Result<()> {
        if payload.len() != count * size {
            return Err(bad(
                path,
                format!(
                    "payload is {} bytes but shape {shape:?} at {size} bytes/element needs {}",
                    payload.len(),
                    count * size
                ),
            ));
        }
        Ok(())
    };

    let data = match descr.as_str() {
        "<f8" => {
            element(8)?;
            TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        "<f4" => {
            element(4)?;
            TensorData::F64(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            )
        }
        "<i8" => {
            element(8)?;
            TensorData::I64(
                payload
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        "<i4" => {
            element(4)?;
            TensorData::I64(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
                    .collect(),
            )
        }
        other => {
            return Err(bad(
                path,
                format!("unsupported dtype `{other}` (use <f4, <f8, <i4, or <i8)"),
            ))
        }
    };
    Ok(Tensor { shape, data })
}

/// Reads an NPY v1.0 tensor from disk.
pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| CliError::reading(path, e))?;
    decode(&bytes, path)
}

/// Reads a float tensor and checks its rank.
pub fn read_f64(path: &Path, expect_dims: &[usize]) -> Result<(Vec<usize>, Vec<f64>)> {
    let tensor = read(path)?;
    if !expect_dims.contains(&tensor.shape.len()) {
        return Err(bad(
            path,
            format!(
                "expected {expect_dims:?}-dimensional tensor, found shape {:?}",
                tensor.shape
            ),
        ));
    }
    let data = tensor.as_f64(path)?.to_vec();
    Ok((tensor.shape, data))
}
