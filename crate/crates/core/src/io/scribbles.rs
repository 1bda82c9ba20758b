//! Binary scribble file, version 1.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "SCRB" | version = 1 | nx | ny | nz
//! fg_run_count | (start, length) * fg_run_count
//! bg_run_count | (start, length) * bg_run_count
//! ```
//!
//! Runs cover consecutive linear voxel indices.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Dims, Label, ScribbleSet};

pub const SCRIBBLE_MAGIC: &[u8; 4] = b"SCRB";
pub const SCRIBBLE_VERSION: u32 = 1;

/// Collapses sorted indices into `(start, length)` runs.
fn runs<'a>(indices: impl Iterator<Item = &'a usize>) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = Vec::new();
    for &i in indices {
        let i = i as u32;
        match out.last_mut() {
            Some((start, len)) if *start + *len == i => *len += 1,
            _ => out.push((i, 1)),
        }
    }
    out
}

pub fn encode_scribbles(s: &ScribbleSet) -> Vec<u8> {
    let d = s.dims();
    let mut out = Vec::new();
    out.extend_from_slice(SCRIBBLE_MAGIC);
    for v in [SCRIBBLE_VERSION, d.nx as u32, d.ny as u32, d.nz as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for list in [runs(s.foreground().iter()), runs(s.background().iter())] {
        out.extend_from_slice(&(list.len() as u32).to_le_bytes());
        for (start, len) in list {
            out.extend_from_slice(&start.to_le_bytes());
            out.extend_from_slice(&len.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or(Error::Truncated {
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
    }
}

pub fn decode_scribbles(bytes: &[u8]) -> Result<ScribbleSet> {
    if bytes.len() < 4 || &bytes[..4] != SCRIBBLE_MAGIC {
        return Err(Error::Validation("bad scribble file magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != SCRIBBLE_VERSION {
        return Err(Error::Validation(format!(
            "unsupported scribble file version {version}"
        )));
    }
    let dims = Dims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize)?;
    let n = dims.len();

    // Each voxel may be claimed by at most one run across both lists.
    let mut owner: Vec<Option<Label>> = vec![None; n];
    let mut set = ScribbleSet::new(dims);
    for label in [Label::Foreground, Label::Background] {
        let count = r.u32()?;
        for _ in 0..count {
            let start = r.u32()? as usize;
            let len = r.u32()? as usize;
            let end = start
                .checked_add(len)
                .filter(|&e| e <= n)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "run ({start}, {len}) exceeds grid of {n} voxels"
                    ))
                })?;
            for (i, slot) in owner.iter_mut().enumerate().take(end).skip(start) {
                if let Some(prev) = slot {
                    return Err(Error::Validation(format!(
                        "overlapping runs at voxel {i} ({prev:?} and {label:?})"
                    )));
                }
                *slot = Some(label);
                set.add(i, label)?;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Validation(format!(
            "{} trailing bytes after scribble runs",
            bytes.len() - r.pos
        )));
    }
    Ok(set)
}

pub fn read_scribbles(path: impl AsRef<Path>) -> Result<ScribbleSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scribbles(&bytes)
}

pub fn write_scribbles(s: &ScribbleSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_scribbles(s)).map_err(|e| Error::io(path, e))
}
