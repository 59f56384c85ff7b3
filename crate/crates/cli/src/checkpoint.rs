//! Binary checkpoints, little-endian throughout:
//!
//! ```text
//! offset  size   content
//! 0       6      b"TAFv1\0"
//! 6       12     nx, ny, nθ as u32
//! 18      8      time as f64
//! 26      8      step as u64
//! 34      8·N    f values as f64, x fastest, then y, then θ
//! ```

use std::fs;
use std::path::Path;

use taf_core::{ModelState, Rank, RealField, TorusGrid};

use crate::error::CheckpointError;

pub const MAGIC: &[u8; 6] = b"TAFv1\0";
pub const HEADER_LEN: usize = 34;

pub fn encode(state: &ModelState) -> Vec<u8> {
    let g = state.grid();
    let values = state.f().values();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(MAGIC);
    for d in [g.nx(), g.ny(), g.ntheta()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&state.time().to_le_bytes());
    out.extend_from_slice(&state.step().to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4-byte slice"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<ModelState, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::Magic {
            found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let dims = [u32_at(bytes, 6), u32_at(bytes, 10), u32_at(bytes, 14)];
    let n: u64 = dims.iter().map(|&d| d as u64).product();
    let expected = HEADER_LEN as u64 + 8 * n;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(CheckpointError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(CheckpointError::Trailing {
            expected,
            extra: actual - expected,
        });
    }
    let time = f64::from_bits(u64_at(bytes, 18));
    let step = u64_at(bytes, 26);
    let grid = TorusGrid::upsilon(dims[0] as usize, dims[1] as usize, dims[2] as usize)?;
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let f = RealField::from_values(grid, Rank::SCALAR, values)?;
    Ok(ModelState::new(f, time, step)?)
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(state)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Load and require the given grid.
pub fn load_checkpoint_for(path: &Path, grid: TorusGrid) -> Result<ModelState, CheckpointError> {
    let state = load_checkpoint(path)?;
    let g = state.grid();
    let found = [g.nx() as u32, g.ny() as u32, g.ntheta() as u32];
    let expected = [grid.nx() as u32, grid.ny() as u32, grid.ntheta() as u32];
    if found != expected {
        return Err(CheckpointError::Dims { expected, found });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ModelState {
        let g = TorusGrid::upsilon(4, 6, 8).unwrap();
        let f = RealField::from_fn(g, |x| 0.1 + 0.01 * (x[0] + 2.0 * x[1] - x[2]).sin());
        ModelState::new(f, 0.375, 12).unwrap()
    }

    #[test]
    fn layout() {
        let b = encode(&state());
        assert_eq!(&b[..6], MAGIC);
        assert_eq!(b.len(), HEADER_LEN + 8 * 4 * 6 * 8);
        assert_eq!(u32_at(&b, 6), 4);
        assert_eq!(u32_at(&b, 14), 8);
        assert_eq!(f64::from_bits(u64_at(&b, 18)), 0.375);
        assert_eq!(u64_at(&b, 26), 12);
    }

    #[test]
    fn errors() {
        let b = encode(&state());
        let cut = &b[..b.len() - 5];
        let msg = decode(cut).unwrap_err().to_string();
        assert!(msg.contains(&format!("expected {} bytes, found {}", b.len(), b.len() - 5)), "{msg}");
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::Magic { .. })));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(CheckpointError::Trailing { extra: 1, .. })));
        let mut odd = b;
        odd[6] = 5;
        assert!(decode(&odd).is_err());
    }
}
