//! Parameter checkpoint container.
//!
//! ```text
//! "MONW" | version u32 | meta_len u32 | meta u32 * meta_len
//! tensor_count u32 | per tensor: ndim u32, dims u32 * ndim
//! per tensor: f32 little-endian values
//! crc32 u32 (over every preceding byte)
//! ```
//!
//! `meta` is an opaque list of integers owned by the model that wrote the
//! file (layer sizes and flags).

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MONW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(meta: &[u32], tensors: &[&Tensor<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    put(&mut out, CHECKPOINT_VERSION);
    put(&mut out, meta.len() as u32);
    for &m in meta {
        put(&mut out, m);
    }
    put(&mut out, tensors.len() as u32);
    for t in tensors {
        put(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put(&mut out, d as u32);
        }
    }
    for t in tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v.to_acc() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

#[derive(Debug)]
pub struct DecodedCheckpoint {
    pub meta: Vec<u32>,
    pub tensors: Vec<Tensor<f32>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: self.pos + n,
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DecodedCheckpoint> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Validation("bad checkpoint magic".into()));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([footer[0], footer[1], footer[2], footer[3]]);
    let crc = crc32fast::hash(body);
    if crc != stored {
        return Err(Error::Validation(format!(
            "checkpoint CRC mismatch: stored {stored:08x}, computed {crc:08x}"
        )));
    }
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Validation(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = c.u32()? as usize;
    let meta = (0..meta_len).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let count = c.u32()? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let nd = c.u32()? as usize;
        if nd > 5 {
            return Err(Error::Validation(format!("tensor with {nd} axes")));
        }
        shapes.push((0..nd).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?);
    }
    let mut tensors = Vec::with_capacity(count);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    if c.pos != body.len() {
        return Err(Error::Validation("trailing bytes in checkpoint".into()));
    }
    Ok(DecodedCheckpoint { meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0f32, -2.5, 3.25, 0.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![7.0f32, 8.0, 9.0]).unwrap();
        let bytes = encode_checkpoint(&[9, 1, 3], &[&a, &b]);
        let d = decode_checkpoint(&bytes).unwrap();
        assert_eq!(d.meta, vec![9, 1, 3]);
        assert_eq!(d.tensors, vec![a, b]);

        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("CRC"));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
