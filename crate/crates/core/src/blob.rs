//! Little-endian numeric blobs with an 8-byte magic and a `rows × cols`
//! header of two `u32` fields, followed by row-major values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const EPISODE_MAGIC: &[u8; 8] = b"MMGEMB01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MMGCKPT1";

const HEADER_LEN: usize = 16;

fn header(magic: &[u8; 8], rows: usize, cols: usize) -> Result<Vec<u8>> {
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("blob dimension {v} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&to_u32(rows)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(cols)?.to_le_bytes());
    Ok(buf)
}

pub fn write_f32(path: &Path, magic: &[u8; 8], rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    debug_assert_eq!(rows * cols, data.len());
    let mut buf = header(magic, rows, cols)?;
    buf.reserve(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_f64(path: &Path, magic: &[u8; 8], rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    debug_assert_eq!(rows * cols, data.len());
    let mut buf = header(magic, rows, cols)?;
    buf.reserve(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a blob and checks its magic, its declared shape against
/// `expected`, and its length against the declared shape.
fn read_checked(path: &Path, magic: &[u8; 8], expected: (usize, usize), width: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::BlobLength {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != magic {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..8]),
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if (rows, cols) != expected {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            detail: format!("declares {rows}×{cols}, manifest expects {}×{}", expected.0, expected.1),
        });
    }
    let want = HEADER_LEN + rows * cols * width;
    if bytes.len() != want {
        return Err(Error::BlobLength {
            path: path.to_path_buf(),
            expected: want,
            found: bytes.len(),
        });
    }
    Ok(bytes[HEADER_LEN..].to_vec())
}

pub fn read_f32(path: &Path, magic: &[u8; 8], rows: usize, cols: usize) -> Result<Vec<f32>> {
    let body = read_checked(path, magic, (rows, cols), 4)?;
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn read_f64(path: &Path, magic: &[u8; 8], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let body = read_checked(path, magic, (rows, cols), 8)?;
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
