//! Binary embedding cache.
//!
//! Layout (all integers little-endian):
//! `"EMB1"`, dimension `u32`, count `u32`, then per record a key length
//! `u32`, the UTF-8 key bytes, and `dimension` IEEE-754 `f32` values.
//! Records are written in key order.

use std::collections::BTreeMap;
use std::path::Path;

use super::{EmbeddingVector, ProviderDescriptor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";
const WHAT: &str = "embedding cache";

/// Vectors are held at `f32` precision so the file round trip is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dimension: usize,
    entries: BTreeMap<String, Vec<f32>>,
    provenance: Option<ProviderDescriptor>,
}

impl EmbeddingCache {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: BTreeMap::new(),
            provenance: None,
        }
    }

    pub fn for_provider(descriptor: ProviderDescriptor) -> Self {
        Self {
            dimension: descriptor.dimension,
            entries: BTreeMap::new(),
            provenance: Some(descriptor),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Not persisted by the file format; `None` after [`EmbeddingCache::load`].
    pub fn provenance(&self) -> Option<&ProviderDescriptor> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: &str, v: &EmbeddingVector) -> Result<()> {
        if v.dim() != self.dimension {
            return Err(Error::InvalidInput(format!(
                "cache dimension is {}, vector has {}",
                self.dimension,
                v.dim()
            )));
        }
        self.entries
            .insert(key.to_string(), v.values().iter().map(|&x| x as f32).collect());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingVector> {
        self.entries
            .get(key)
            .map(|v| EmbeddingVector(v.iter().map(|&x| x as f64).collect()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (k, v) in &self.entries {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::at_offset(WHAT, 0, "bad magic, expected EMB1"));
        }
        let dimension = r.u32("dimension")? as usize;
        if dimension == 0 {
            return Err(Error::at_offset(WHAT, 4, "dimension is zero"));
        }
        let count_at = r.pos;
        let count = r.u32("count")? as usize;
        let mut entries = BTreeMap::new();
        for i in 0..count {
            let rec_at = r.pos as u64;
            let klen = r.u32("key length").map_err(|_| {
                Error::at_offset(
                    WHAT,
                    rec_at,
                    format!("declared count {count} (at offset {count_at}) exceeds body: record {i} missing"),
                )
            })? as usize;
            let key_at = r.pos as u64;
            let key = std::str::from_utf8(r.take(klen, "key")?)
                .map_err(|_| Error::at_offset(WHAT, key_at, "key is not UTF-8"))?
                .to_string();
            let raw = r.take(dimension * 4, "vector")?;
            let v = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if entries.insert(key, v).is_some() {
                return Err(Error::at_offset(WHAT, key_at, "duplicate key"));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::at_offset(
                WHAT,
                r.pos as u64,
                "trailing bytes after last record",
            ));
        }
        Ok(Self {
            dimension,
            entries,
            provenance: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::at_offset(
                WHAT,
                self.pos as u64,
                format!("truncated {field}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}
