//! Named-tensor container and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   "STSC"
//! version    u32       1
//! count      u32       number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   rank     u8, dims (u32 each)
//!   data     f32 x prod(dims)
//! crc32      u32       IEEE CRC-32 of every preceding byte
//! ```
//!
//! Tensors are written in name order, so `save -> load -> save` reproduces
//! the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 4] = b"STSC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        StoredTensor { dims, data }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: StoredTensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    /// Tensor `name` with exactly `dims`, or the matching diagnostic.
    pub fn expect(&self, name: &str, dims: &[usize]) -> Result<&StoredTensor, CheckpointError> {
        let t = self
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if t.dims != dims {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: dims.to_vec(),
                found: t.dims.clone(),
            });
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| CheckpointError::TooLarge("<table>".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let too_large = || CheckpointError::TooLarge(name.clone());
            let len = u16::try_from(name.len()).map_err(|_| too_large())?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.dims.len()).map_err(|_| too_large())?;
            out.push(rank);
            for &d in &t.dims {
                let d = u32::try_from(d).map_err(|_| too_large())?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                CheckpointError::UnexpectedEof
            } else {
                CheckpointError::NotACheckpoint
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::NotACheckpoint);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        if bytes.len() < 16 {
            return Err(CheckpointError::UnexpectedEof);
        }
        // Verify the CRC before trusting any length field in the body.
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        let mut parse = || -> Result<(), CheckpointError> {
            let mut r = Reader {
                bytes: body,
                pos: r.pos,
            };
            for _ in 0..count {
                let len = r.u16()? as usize;
                let name = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| CheckpointError::BadName)?
                    .to_string();
                let rank = r.u8()? as usize;
                let mut dims = Vec::with_capacity(rank);
                for _ in 0..rank {
                    dims.push(r.u32()? as usize);
                }
                let numel = dims
                    .iter()
                    .try_fold(1usize, |a, &d| a.checked_mul(d))
                    .ok_or(CheckpointError::UnexpectedEof)?;
                let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::UnexpectedEof)?)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                if tensors.insert(name.clone(), StoredTensor { dims, data }).is_some() {
                    return Err(CheckpointError::DuplicateTensor(name));
                }
            }
            if r.pos != body.len() {
                return Err(CheckpointError::TrailingBytes);
            }
            Ok(())
        };
        let parsed = parse();
        if stored != computed {
            // A truncated file fails its structural parse; report that first.
            if let Err(CheckpointError::UnexpectedEof) = parsed {
                return Err(CheckpointError::UnexpectedEof);
            }
            return Err(CheckpointError::CrcMismatch { stored, computed });
        }
        parsed?;
        Ok(Checkpoint { tensors })
    }

    /// CRC-32 that [`to_bytes`](Self::to_bytes) writes as the trailer.
    pub fn crc(&self) -> Result<u32, CheckpointError> {
        let bytes = self.to_bytes()?;
        Ok(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Checkpoint::from_bytes(&bytes)?)
    }
}

/// Trailer CRC of an encoded checkpoint file.
pub fn stored_crc(bytes: &[u8]) -> Option<u32> {
    let tail = bytes.len().checked_sub(4)?;
    Some(u32::from_le_bytes(bytes[tail..].try_into().ok()?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::UnexpectedEof)?;
        if end > self.bytes.len() {
            return Err(CheckpointError::UnexpectedEof);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
