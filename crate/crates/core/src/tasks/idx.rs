//! IDX container files (the MNIST distribution format).
//!
//! A file starts with a big-endian magic: two zero bytes, a type code
//! (`0x08` for unsigned bytes) and the number of dimensions. Then come that
//! many big-endian `u32` dimension sizes and the raw payload. Image files are
//! `0x00000803` (count × rows × cols); label files are `0x00000801`.

use std::fs;
use std::path::Path;

use crate::autodiff::{Real, Tensor};
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw IDX contents: dimension sizes and unsigned byte payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

/// Parses an IDX byte buffer, requiring the given magic.
pub fn parse_idx(buf: &[u8], magic: u32) -> Result<IdxArray> {
    let word = |at: usize| -> Result<u32> {
        buf.get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Idx(format!("truncated header at byte {at}")))
    };
    let found = word(0)?;
    if found != magic {
        return Err(Error::Idx(format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for k in 0..rank {
        dims.push(word(4 + 4 * k)? as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx(format!("dimensions {dims:?} overflow")))?;
    let start = 4 + 4 * rank;
    let end = start
        .checked_add(count)
        .ok_or_else(|| Error::Idx("payload size overflow".into()))?;
    if buf.len() < end {
        return Err(Error::Idx(format!(
            "truncated payload: {} of {count} bytes",
            buf.len().saturating_sub(start)
        )));
    }
    Ok(IdxArray {
        dims,
        bytes: buf[start..end].to_vec(),
    })
}

/// Loads an image file as an `N×H×W` tensor scaled to `[0, 1]`.
pub fn load_idx_images<S: Real>(path: &Path) -> Result<Tensor<S>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let arr = parse_idx(&buf, IMAGE_MAGIC)?;
    let data = arr.bytes.iter().map(|&b| S::from_f64(f64::from(b) / 255.0)).collect();
    Tensor::new(arr.dims, data)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_idx(&buf, LABEL_MAGIC)?.bytes)
}

/// Encodes an IDX buffer; the rank is taken from the magic's low byte.
pub fn encode_idx(magic: u32, dims: &[usize], bytes: &[u8]) -> Result<Vec<u8>> {
    if (magic & 0xff) as usize != dims.len() || dims.iter().product::<usize>() != bytes.len() {
        return Err(Error::Idx(format!("dims {dims:?} do not fit {} bytes", bytes.len())));
    }
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend_from_slice(bytes);
    Ok(out)
}

pub fn write_idx(path: &Path, magic: u32, dims: &[usize], bytes: &[u8]) -> Result<()> {
    fs::write(path, encode_idx(magic, dims, bytes)?).map_err(|e| Error::io(path, e))
}
