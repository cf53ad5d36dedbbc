//! NPY tensor files, format versions 1.0 and 2.0, C-order, little-endian.
//!
//! Supported dtypes: `<f4`, `<f8`, `|u1`, `<u2`. Fortran-order files and
//! big-endian payloads are rejected with an explicit error. All parse
//! failures report the byte offset that could not be consumed.

use std::path::Path;

use crate::error::{Error, Result};

use super::{Dtype, Tensor, TensorData};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Serialize as NPY version 1.0 (header padded to a 64-byte boundary).
pub fn to_npy_bytes(tensor: &Tensor) -> Result<Vec<u8>> {
    let shape_body = tensor
        .shape()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let shape_str = if tensor.shape().len() == 1 {
        format!("({},)", shape_body)
    } else {
        format!("({})", shape_body)
    };
    let header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        tensor.dtype().descr(),
        shape_str
    );
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1; // magic+version+len+header+\n
    let padding = (64 - unpadded % 64) % 64;
    let header_len = header.len() + padding + 1;
    if header_len > u16::MAX as usize {
        return Err(Error::InvalidParameter(
            "npy header too large for version 1.0".into(),
        ));
    }

    let mut out = Vec::with_capacity(unpadded + padding + tensor.byte_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.resize(out.len() + padding, b' ');
    out.push(b'\n');
    match tensor.data() {
        TensorData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::F64(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::U8(v) => out.extend_from_slice(v),
        TensorData::U16(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn header_field<'a>(header: &'a str, key: &str, offset: u64) -> Result<&'a str> {
    let at = header
        .find(&format!("'{key}'"))
        .ok_or_else(|| Error::format(offset, format!("npy header misses key '{key}'")))?;
    let rest = &header[at + key.len() + 2..];
    let colon = rest
        .find(':')
        .ok_or_else(|| Error::format(offset, "malformed npy header dict"))?;
    Ok(rest[colon + 1..].trim_start())
}

/// Parse an NPY byte stream. `base` is the offset of `bytes[0]` within the
/// containing file, so errors point at absolute positions even inside NPZ
/// members.
pub fn from_npy_bytes(bytes: &[u8], base: u64) -> Result<Tensor> {
    let at = |pos: usize| base + pos as u64;
    if bytes.len() < 8 {
        return Err(Error::format(
            at(bytes.len()),
            "truncated npy: missing magic/version",
        ));
    }
    if &bytes[..6] != MAGIC {
        return Err(Error::format(at(0), "bad npy magic"));
    }
    let version = (bytes[6], bytes[7]);
    let (header_len, header_start) = match version {
        (1, 0) => {
            if bytes.len() < 10 {
                return Err(Error::format(
                    at(bytes.len()),
                    "truncated npy: missing header length",
                ));
            }
            (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10usize)
        }
        (2, 0) => {
            if bytes.len() < 12 {
                return Err(Error::format(
                    at(bytes.len()),
                    "truncated npy: missing header length",
                ));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12usize,
            )
        }
        (major, minor) => {
            return Err(Error::format(
                at(6),
                format!("unsupported npy version {major}.{minor} (supported: 1.0, 2.0)"),
            ))
        }
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(Error::format(at(bytes.len()), "truncated npy header"));
    }
    let header = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| Error::format(at(header_start), "npy header is not ascii"))?;

    let descr_raw = header_field(header, "descr", at(header_start))?;
    let descr: String = descr_raw
        .chars()
        .skip(1)
        .take_while(|c| *c != '\'')
        .collect();
    let dtype = match descr.as_str() {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        "|u1" | "<u1" => Dtype::U8,
        "<u2" => Dtype::U16,
        other if other.starts_with('>') => {
            return Err(Error::format(
                at(header_start),
                format!("big-endian dtype '{other}' unsupported; little-endian only"),
            ))
        }
        other => {
            return Err(Error::format(
                at(header_start),
                format!("unsupported dtype '{other}' (supported: <f4, <f8, |u1, <u2)"),
            ))
        }
    };

    let fortran = header_field(header, "fortran_order", at(header_start))?;
    if fortran.starts_with("True") {
        return Err(Error::format(
            at(header_start),
            "fortran_order arrays unsupported; re-save in C order",
        ));
    }
    if !fortran.starts_with("False") {
        return Err(Error::format(
            at(header_start),
            "malformed fortran_order value",
        ));
    }

    let shape_field = header_field(header, "shape", at(header_start))?;
    if !shape_field.starts_with('(') {
        return Err(Error::format(at(header_start), "malformed shape tuple"));
    }
    let close = shape_field
        .find(')')
        .ok_or_else(|| Error::format(at(header_start), "unterminated shape tuple"))?;
    let inner = &shape_field[1..close];
    let mut shape = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        shape.push(
            part.parse::<usize>().map_err(|_| {
                Error::format(at(header_start), format!("bad shape entry '{part}'"))
            })?,
        );
    }
    if shape.is_empty() {
        return Err(Error::format(
            at(header_start),
            "zero-dimensional arrays unsupported",
        ));
    }

    let count: usize = shape.iter().product();
    let expected = count * dtype.item_size();
    let payload = &bytes[data_start..];
    if payload.len() < expected {
        return Err(Error::format(
            at(data_start + payload.len()),
            format!(
                "truncated npy payload: expected {expected} bytes, got {}",
                payload.len()
            ),
        ));
    }
    let payload = &payload[..expected];
    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                .collect(),
        ),
        Dtype::U8 => TensorData::U8(payload.to_vec()),
        Dtype::U16 => TensorData::U16(
            payload
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect(),
        ),
    };
    Tensor::new(shape, data)
}

pub fn write_npy(path: &Path, tensor: &Tensor) -> Result<()> {
    let bytes = to_npy_bytes(tensor)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_npy(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_npy_bytes(&bytes, 0)
}
