//! `NGT1` dense tensor files.
//!
//! Layout: the ASCII magic `NGT1`, one `u8` rank, `rank` little-endian `u32`
//! extents, then the row-major payload as little-endian `f32`.

use std::path::Path;

use super::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NGT1";

pub fn encode(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::Shape(format!("rank {} exceeds NGT1 limit", t.rank())))?;
    let mut out = Vec::with_capacity(5 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(rank);
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::Shape(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let err = |msg: &str| Error::parse("NGT1 tensor", msg);
    if bytes.len() < 5 {
        return Err(err("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(err("bad magic"));
    }
    let rank = bytes[4] as usize;
    let header = 5 + 4 * rank;
    if bytes.len() < header {
        return Err(err("truncated extents"));
    }
    let shape: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| err("extent product overflows"))?;
    let payload = &bytes[header..];
    if payload.len() != count * 4 {
        return Err(err(&format!(
            "payload holds {} bytes, header implies {}",
            payload.len(),
            count * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| match e {
        Error::NonFinite(_) => err("non-finite payload value"),
        other => other,
    })
}

/// Writes atomically via a sibling temporary file.
pub fn save(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode(t)?)
}

pub fn load(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(path.display().to_string(), msg),
        other => other,
    })
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
