//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `b"ADVCKPT\0"`, `u32 version`, `u32 entry count`, then per entry
//! `u32 name length`, name bytes, `u8 kind`, `u8 group tag`, `u32 ndim`, `u32` dims,
//! `f32` payload; finally `u32 extras length` and a UTF-8 JSON extras blob carrying
//! PRNG and optimizer state.

use std::io::{Read, Write};
use std::path::Path;

use super::params::Group;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ADVCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Parameter,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: EntryKind,
    pub group: Group,
    pub tensor: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
    pub extras: String,
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(match e.kind {
                EntryKind::Parameter => 0,
                EntryKind::Buffer => 1,
            });
            out.push(e.group.tag());
            out.extend_from_slice(&(e.tensor.ndim() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.extras.len() as u32).to_le_bytes());
        out.extend_from_slice(self.extras.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0, origin };
        if r.take(8)? != MAGIC {
            return Err(Error::format(origin, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format(origin, "entry name is not UTF-8"))?;
            let kind = match r.take(1)?[0] {
                0 => EntryKind::Parameter,
                1 => EntryKind::Buffer,
                k => return Err(Error::format(origin, format!("unknown entry kind {k}"))),
            };
            let tag = r.take(1)?[0];
            let group = Group::from_tag(tag)
                .ok_or_else(|| Error::format(origin, format!("unknown group tag {tag}")))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::format(origin, format!("entry `{name}`: {e}")))?;
            entries.push(CheckpointEntry { name, kind, group, tensor });
        }
        let len = r.u32()? as usize;
        let extras = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::format(origin, "extras are not UTF-8"))?;
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { entries, extras })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.origin, "truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
