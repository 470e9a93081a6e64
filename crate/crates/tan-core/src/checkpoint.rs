//! Named-tensor container with a bit-exact binary layout, used for model
//! checkpoints and generated dataset videos.
//!
//! Layout (all integers and floats little-endian):
//!   magic "TANCKPT1" | version u32 = 1 | count u32 |
//!   per entry: name_len u16 | name UTF-8 | ndim u8 | ndim x dim u32 |
//!              prod(dims) x value f32
//!
//! Entries keep insertion order, so writing the same content twice
//! produces identical bytes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, TanError};

pub const MAGIC: &[u8; 8] = b"TANCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Default, Clone)]
pub struct Checkpoint {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) -> Result<()> {
        let name = name.into();
        let numel: usize = dims.iter().product();
        if numel != values.len() {
            return Err(TanError::shape(
                "checkpoint",
                format!("entry '{name}': dims {dims:?} vs {} values", values.len()),
            ));
        }
        if self.index.contains_key(&name) {
            return Err(TanError::Config(format!("duplicate checkpoint entry '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, dims, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across entries; must equal the model's parameter
    /// count for a full checkpoint.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(e.name.as_bytes());
            buf.push(e.dims.len() as u8);
            for &d in &e.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = std::fs::File::create(path).map_err(|e| TanError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| TanError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| TanError::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| TanError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin: origin.to_path_buf(),
        };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(TanError::CheckpointMagic {
                path: r.origin,
                found: magic.to_vec(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TanError::CheckpointVersion {
                path: r.origin,
                found: version,
            });
        }
        let count = r.u32()? as usize;
        let mut ckpt = Checkpoint::new();
        for i in 0..count {
            let name_len = r.u16()? as usize;
            let name_bytes = r.take(name_len)?.to_vec();
            let name = String::from_utf8(name_bytes).map_err(|_| TanError::CheckpointTruncated {
                path: r.origin.clone(),
                detail: format!("entry {i}: name is not valid UTF-8"),
            })?;
            let ndim = r.u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            let numel: usize = dims.iter().product();
            let raw = r.take(numel * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ckpt.insert(name, dims, values)?;
        }
        if r.pos != bytes.len() {
            return Err(TanError::CheckpointTruncated {
                path: r.origin,
                detail: format!("{} trailing bytes after {} entries", bytes.len() - r.pos, count),
            });
        }
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: PathBuf,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TanError::CheckpointTruncated {
                path: self.origin.clone(),
                detail: format!(
                    "needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
