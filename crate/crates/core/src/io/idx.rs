//! IDX binary files: big-endian header, unsigned byte payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Decoded IDX file of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Idx {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn parse_err(path: &Path, reason: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason,
    }
}

/// Parses an in-memory IDX file; `path` only labels errors.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<Idx> {
    if bytes.len() < 4 {
        return Err(parse_err(path, format!("file ends at byte {} inside the 4-byte magic", bytes.len())));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] == 0 {
        return Err(parse_err(path, format!("bad magic 0x{magic:08x} at byte 0 (expected unsigned-byte IDX)")));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(parse_err(
            path,
            format!("file ends at byte {} inside the {header}-byte header", bytes.len()),
        ));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| parse_err(path, format!("dimensions {dims:?} overflow")))?;
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(parse_err(
            path,
            format!("truncated: data ends at byte {} but header {dims:?} needs {expected} bytes", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(parse_err(
            path,
            format!("{} unexpected trailing bytes after byte {expected}", bytes.len() - expected),
        ));
    }
    Ok(Idx {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<Idx> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

pub fn encode_idx(idx: &Idx) -> Result<Vec<u8>> {
    let payload: usize = idx.dims.iter().product();
    if payload != idx.data.len() || idx.dims.is_empty() || idx.dims.len() > 255 {
        return Err(Error::Shape(format!(
            "IDX dims {:?} do not describe {} bytes",
            idx.dims,
            idx.data.len()
        )));
    }
    let mut out = vec![0, 0, 0x08, idx.dims.len() as u8];
    for &d in &idx.dims {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("IDX dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&idx.data);
    Ok(out)
}

pub fn write_idx(path: &Path, idx: &Idx) -> Result<()> {
    fs::write(path, encode_idx(idx)?).map_err(|e| Error::io(path, e))
}

/// Reads an image file: returns (count, rows, cols, pixels).
pub fn read_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    check_magic(&bytes, IMAGE_MAGIC, path)?;
    let idx = parse_idx(&bytes, path)?;
    Ok((idx.dims[0], idx.dims[1], idx.dims[2], idx.data))
}

/// Reads a label file, rejecting labels outside `0..classes`.
pub fn read_labels(path: &Path, classes: usize) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    check_magic(&bytes, LABEL_MAGIC, path)?;
    let idx = parse_idx(&bytes, path)?;
    idx.data
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < classes {
                Ok(l as usize)
            } else {
                Err(parse_err(path, format!("label {l} of sample {i} at byte {} is not below {classes}", 8 + i)))
            }
        })
        .collect()
}

fn check_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    if bytes.len() >= 4 {
        let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        if magic != want {
            return Err(parse_err(path, format!("bad magic 0x{magic:08x} at byte 0, expected 0x{want:08x}")));
        }
    }
    Ok(())
}
