//! "GAMV v1" tensor container: magic `GAMV`, `u8` version, `u8` rank,
//! `rank` little-endian `u32` dims, then little-endian `f64` values in
//! row-major order.

use std::path::Path;

use gamver_core::{Tensor, TensorError};
use thiserror::Error;

use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"GAMV";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GamvError {
    #[error("not a GAMV file (bad magic)")]
    Magic,
    #[error("unsupported GAMV version {0}")]
    Version(u8),
    #[error("truncated GAMV data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0} trailing bytes after GAMV payload")]
    Trailing(usize),
    #[error("tensor rank {0} does not fit the container")]
    Rank(usize),
    #[error("dimension {0} does not fit in u32")]
    Dim(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn encode(t: &Tensor) -> Result<Vec<u8>, GamvError> {
    let rank = u8::try_from(t.rank()).map_err(|_| GamvError::Rank(t.rank()))?;
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(rank);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| GamvError::Dim(d))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, GamvError> {
    let need = |expected: usize| {
        if bytes.len() < expected {
            Err(GamvError::Truncated {
                expected,
                got: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(6)?;
    if &bytes[..4] != MAGIC {
        return Err(GamvError::Magic);
    }
    if bytes[4] != VERSION {
        return Err(GamvError::Version(bytes[4]));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    need(header)?;
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(GamvError::Rank(rank))?;
    let total = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(header))
        .ok_or(GamvError::Rank(rank))?;
    need(total)?;
    if bytes.len() > total {
        return Err(GamvError::Trailing(bytes.len() - total));
    }
    let values = bytes[header..total]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::new(dims, values)?)
}

pub fn write(path: &Path, t: &Tensor) -> Result<(), CliError> {
    let bytes = encode(t).map_err(|e| CliError::format(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::format(path, e.to_string()))
}
