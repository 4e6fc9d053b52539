//! Binary MPS checkpoints: magic, format version, site count, center, then
//! per site the three tensor dimensions and the row-major data, all
//! little-endian.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

use super::mps::MatrixProductState;

const MAGIC: &[u8; 8] = b"NITEMPS\0";
const VERSION: u32 = 1;

pub(crate) fn encode(state: &MatrixProductState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(state.num_sites() as u64).to_le_bytes());
    out.extend_from_slice(&(state.center() as u64).to_le_bytes());
    for t in state.tensors() {
        let (a, b, c) = t.dim();
        for d in [a, b, c] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<MatrixProductState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not an MPS checkpoint".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u64()? as usize;
    let center = r.u64()? as usize;
    let mut tensors = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let dims = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
        let len = dims
            .0
            .checked_mul(dims.1)
            .and_then(|x| x.checked_mul(dims.2))
            .ok_or_else(|| Error::Checkpoint("tensor dimensions overflow".into()))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Array3::from_shape_vec(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    MatrixProductState::from_tensors(tensors, center)
}

pub fn save(state: &MatrixProductState, path: &Path) -> Result<()> {
    std::fs::write(path, encode(state))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MatrixProductState> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let mut s = MatrixProductState::product(&[[1.0, 0.5], [0.3, 1.0], [1.0, 1.0]]).unwrap();
        s.canonicalize(1).unwrap();
        let bytes = encode(&s);
        assert_eq!(decode(&bytes).unwrap(), s);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(decode(&bad).is_err());
    }
}
