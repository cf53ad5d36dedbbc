//! NPZ archives: a ZIP container of `.npy` members.
//!
//! The writer emits stored (uncompressed) members with zeroed timestamps,
//! so identical tensors always produce byte-identical archives. The reader
//! accepts both stored and deflate members and verifies CRCs. This is a
//! deliberately small ZIP subset: no zip64, no data descriptors, no disk
//! spanning.

use std::io::Read;
use std::path::Path;

use flate2::read::DeflateDecoder;

use crate::error::{Error, Result};

use super::npy::{from_npy_bytes, to_npy_bytes};
use super::Tensor;

const LOCAL_SIG: u32 = 0x0403_4b50;
const CENTRAL_SIG: u32 = 0x0201_4b50;
const EOCD_SIG: u32 = 0x0605_4b50;
// DOS date 1980-01-01, the ZIP epoch; pinned for deterministic output.
const DOS_DATE: u16 = 0x0021;

fn u16le(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32le(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Serialize named tensors into an NPZ archive (stored members, in input
/// order).
pub fn to_npz_bytes(entries: &[(&str, &Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut central = Vec::new();
    let mut count = 0u16;
    for (name, tensor) in entries {
        if name.is_empty() || name.contains('/') || name.contains('\\') {
            return Err(Error::InvalidParameter(format!(
                "bad npz member name '{name}'"
            )));
        }
        let file_name = format!("{name}.npy");
        let payload = to_npy_bytes(tensor)?;
        let crc = crc32fast::hash(&payload);
        if payload.len() > u32::MAX as usize {
            return Err(Error::InvalidParameter("npz member exceeds 4 GiB".into()));
        }
        let offset = out.len() as u32;

        out.extend_from_slice(&LOCAL_SIG.to_le_bytes());
        out.extend_from_slice(&20u16.to_le_bytes()); // version needed
        out.extend_from_slice(&0u16.to_le_bytes()); // flags
        out.extend_from_slice(&0u16.to_le_bytes()); // method: stored
        out.extend_from_slice(&0u16.to_le_bytes()); // mod time
        out.extend_from_slice(&DOS_DATE.to_le_bytes());
        out.extend_from_slice(&crc.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&(file_name.len() as u16).to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes()); // extra len
        out.extend_from_slice(file_name.as_bytes());
        out.extend_from_slice(&payload);

        central.extend_from_slice(&CENTRAL_SIG.to_le_bytes());
        central.extend_from_slice(&20u16.to_le_bytes()); // made by
        central.extend_from_slice(&20u16.to_le_bytes()); // needed
        central.extend_from_slice(&0u16.to_le_bytes()); // flags
        central.extend_from_slice(&0u16.to_le_bytes()); // method
        central.extend_from_slice(&0u16.to_le_bytes()); // time
        central.extend_from_slice(&DOS_DATE.to_le_bytes());
        central.extend_from_slice(&crc.to_le_bytes());
        central.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        central.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        central.extend_from_slice(&(file_name.len() as u16).to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes()); // extra
        central.extend_from_slice(&0u16.to_le_bytes()); // comment
        central.extend_from_slice(&0u16.to_le_bytes()); // disk
        central.extend_from_slice(&0u16.to_le_bytes()); // internal attrs
        central.extend_from_slice(&0u32.to_le_bytes()); // external attrs
        central.extend_from_slice(&offset.to_le_bytes());
        central.extend_from_slice(file_name.as_bytes());

        count = count
            .checked_add(1)
            .ok_or_else(|| Error::InvalidParameter("too many npz members".into()))?;
    }
    let cd_offset = out.len() as u32;
    out.extend_from_slice(&central);
    out.extend_from_slice(&EOCD_SIG.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes()); // disk
    out.extend_from_slice(&0u16.to_le_bytes()); // cd disk
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(central.len() as u32).to_le_bytes());
    out.extend_from_slice(&cd_offset.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes()); // comment
    Ok(out)
}

/// Parse an NPZ archive, returning `.npy` members as named tensors in
/// central-directory order. Non-`.npy` members are ignored.
pub fn from_npz_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 22 {
        return Err(Error::format(
            bytes.len() as u64,
            "file too small for a zip archive",
        ));
    }
    // EOCD: scan backward over the (possibly empty) trailing comment
    let mut eocd = None;
    let lo = bytes.len().saturating_sub(22 + u16::MAX as usize);
    for pos in (lo..=bytes.len() - 22).rev() {
        if u32le(bytes, pos) == EOCD_SIG {
            eocd = Some(pos);
            break;
        }
    }
    let eocd = eocd.ok_or_else(|| {
        Error::format(
            bytes.len() as u64,
            "zip end-of-central-directory signature not found",
        )
    })?;
    let entry_count = u16le(bytes, eocd + 10) as usize;
    let cd_offset = u32le(bytes, eocd + 16) as usize;
    if cd_offset > bytes.len() {
        return Err(Error::format(
            eocd as u64 + 16,
            "central directory offset out of range",
        ));
    }

    let mut tensors = Vec::new();
    let mut pos = cd_offset;
    for _ in 0..entry_count {
        if pos + 46 > bytes.len() || u32le(bytes, pos) != CENTRAL_SIG {
            return Err(Error::format(pos as u64, "bad central directory entry"));
        }
        let flags = u16le(bytes, pos + 8);
        let method = u16le(bytes, pos + 10);
        let crc = u32le(bytes, pos + 16);
        let csize = u32le(bytes, pos + 20) as usize;
        let usize_ = u32le(bytes, pos + 24) as usize;
        let name_len = u16le(bytes, pos + 28) as usize;
        let extra_len = u16le(bytes, pos + 30) as usize;
        let comment_len = u16le(bytes, pos + 32) as usize;
        let local_offset = u32le(bytes, pos + 42) as usize;
        if pos + 46 + name_len > bytes.len() {
            return Err(Error::format(
                pos as u64 + 46,
                "truncated central directory name",
            ));
        }
        let name = std::str::from_utf8(&bytes[pos + 46..pos + 46 + name_len])
            .map_err(|_| Error::format(pos as u64 + 46, "non-utf8 member name"))?
            .to_string();
        pos += 46 + name_len + extra_len + comment_len;

        if flags & 0x08 != 0 {
            return Err(Error::format(
                local_offset as u64,
                format!("member '{name}' uses data descriptors; unsupported"),
            ));
        }
        if local_offset + 30 > bytes.len() || u32le(bytes, local_offset) != LOCAL_SIG {
            return Err(Error::format(local_offset as u64, "bad local file header"));
        }
        let l_name = u16le(bytes, local_offset + 26) as usize;
        let l_extra = u16le(bytes, local_offset + 28) as usize;
        let data_start = local_offset + 30 + l_name + l_extra;
        if data_start + csize > bytes.len() {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated member '{name}'"),
            ));
        }
        let raw = &bytes[data_start..data_start + csize];
        let data: Vec<u8> = match method {
            0 => raw.to_vec(),
            8 => {
                let mut out = Vec::with_capacity(usize_);
                DeflateDecoder::new(raw)
                    .read_to_end(&mut out)
                    .map_err(|e| {
                        Error::format(data_start as u64, format!("deflate error in '{name}': {e}"))
                    })?;
                out
            }
            other => {
                return Err(Error::format(
                    data_start as u64,
                    format!("member '{name}' uses unsupported compression method {other}"),
                ))
            }
        };
        if data.len() != usize_ {
            return Err(Error::format(
                data_start as u64,
                format!(
                    "member '{name}' decompressed to {} bytes, expected {usize_}",
                    data.len()
                ),
            ));
        }
        if crc32fast::hash(&data) != crc {
            return Err(Error::format(
                data_start as u64,
                format!("crc mismatch in '{name}'"),
            ));
        }
        if let Some(stem) = name.strip_suffix(".npy") {
            let tensor = from_npy_bytes(&data, data_start as u64)?;
            tensors.push((stem.to_string(), tensor));
        }
    }
    Ok(tensors)
}

pub fn write_npz(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    let bytes = to_npz_bytes(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_npz(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_npz_bytes(&bytes)
}
