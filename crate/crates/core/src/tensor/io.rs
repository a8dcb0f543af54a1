//! Raw tensor files: `SOTN`, version byte, dtype byte, rank byte, `rank` u32
//! little-endian extents, then the row-major little-endian payload.

use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SOTN";
const VERSION: u8 = 1;

/// Payload storage type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64 = 0,
    F32 = 1,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// Serializes a tensor. `F32` storage rounds every element to single precision.
pub fn encode_tensor(t: &Tensor, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + dtype.width() * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    out
}

/// Parses a tensor; `F32` payloads are widened to `f64`.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, Dtype)> {
    if bytes.len() < 7 {
        return Err(Error::parse(bytes.len(), "truncated SOTN header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::parse(0, "bad magic, expected SOTN"));
    }
    if bytes[4] != VERSION {
        return Err(Error::parse(4, format!("unsupported SOTN version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => Dtype::F64,
        1 => Dtype::F32,
        d => return Err(Error::parse(5, format!("unknown dtype {d}"))),
    };
    let rank = bytes[6] as usize;
    if rank == 0 {
        return Err(Error::parse(6, "rank must be positive"));
    }
    let mut off = 7;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let chunk = bytes
            .get(off..off + 4)
            .ok_or_else(|| Error::parse(bytes.len(), "truncated SOTN extents"))?;
        shape.push(u32::from_le_bytes(chunk.try_into().unwrap()) as usize);
        off += 4;
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse(7, "extent product overflows"))?;
    let need = n * dtype.width();
    let payload = &bytes[off..];
    if payload.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: need {need} bytes, have {}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(Error::parse(off + need, "trailing bytes after payload"));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(off + i * dtype.width(), "non-finite element"));
    }
    let t = Tensor::new(shape, data).map_err(|e| Error::parse(7, e.to_string()))?;
    Ok((t, dtype))
}

pub fn write_tensor_file(path: &Path, t: &Tensor, dtype: Dtype) -> Result<()> {
    std::fs::write(path, encode_tensor(t, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map(|(t, _)| t).map_err(|e| e.in_file(path))
}
