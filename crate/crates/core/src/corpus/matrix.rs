//! Flat binary matrix files.
//!
//! Layout (little endian): magic `PTMX`, `u16` version, `u8` dtype code,
//! `u8` rank, `rank × u64` extents, then the row-major data.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"PTMX";
pub const VERSION: u16 = 1;

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DType::F32.code());
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a matrix file (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported matrix version {version}")));
    }
    let dtype = DType::from_code(bytes[6]).ok_or_else(|| bad(format!("unknown dtype code {}", bytes[6])))?;
    if dtype != DType::F32 {
        return Err(bad(format!("expected f32 data, found {dtype:?}")));
    }
    let rank = bytes[7] as usize;
    let mut off = 8;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let b = bytes.get(off..off + 8).ok_or_else(|| bad("truncated header".into()))?;
        shape.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
        off += 8;
    }
    let n: usize = shape.iter().product();
    let body = &bytes[off..];
    if body.len() != 4 * n {
        return Err(bad(format!("expected {} data bytes, found {}", 4 * n, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor::new(&shape, data)?)
}

pub fn write(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
