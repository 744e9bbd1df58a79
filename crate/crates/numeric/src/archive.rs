//! Flat binary archive of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CGMARCH\0"
//! u32     version string length, then UTF-8 bytes
//! u32     metadata count, then (u32 len, key bytes, u32 len, value bytes)*
//! u32     entry count, then per entry:
//!         u32 name length, name bytes
//!         u8  dtype code (1 = f32, 2 = f64)
//!         u32 rank, rank * u64 extents
//!         u64 payload length, raw little-endian element bytes
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NumericError, Result};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const ARCHIVE_VERSION: &str = "cgm-archive/1";
const MAGIC: &[u8; 8] = b"CGMARCH\0";

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub version: String,
    pub metadata: BTreeMap<String, String>,
    pub entries: Vec<ArchiveEntry>,
}

impl Default for Archive {
    fn default() -> Self {
        Self::new()
    }
}

fn err(msg: impl Into<String>) -> NumericError {
    NumericError::Archive(msg.into())
}

impl Archive {
    pub fn new() -> Self {
        Self {
            version: ARCHIVE_VERSION.to_string(),
            metadata: BTreeMap::new(),
            entries: Vec::new(),
        }
    }

    /// Adds or replaces an entry.
    pub fn put<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        let entry = ArchiveEntry {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Decodes an entry; its stored element type must be `T`.
    pub fn get<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self
            .entry(name)
            .ok_or_else(|| err(format!("missing entry {name}")))?;
        if e.dtype != T::DTYPE {
            return Err(err(format!(
                "entry {name} holds {}, requested {}",
                e.dtype.name(),
                T::DTYPE.name()
            )));
        }
        let sz = T::DTYPE.size();
        let data = e.bytes.chunks_exact(sz).map(T::read_le).collect();
        Tensor::new(&e.shape, data)
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.insert(key.to_string(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(|s| s.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.version);
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            out.push(e.dtype.code());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(e.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&e.bytes);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(err("bad magic"));
        }
        let version = r.string()?;
        if version != ARCHIVE_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let nmeta = r.u32()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..nmeta {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.string()?;
            let code = r.take(1)?[0];
            let dtype = DType::from_code(code).ok_or_else(|| err(format!("bad dtype {code}")))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = r.u64()? as usize;
            let n: usize = shape.iter().product();
            if len != n * dtype.size() {
                return Err(err(format!("entry {name}: payload {len} bytes for {n} elements")));
            }
            let bytes = r.take(len)?.to_vec();
            entries.push(ArchiveEntry {
                name,
                dtype,
                shape,
                bytes,
            });
        }
        if r.pos != buf.len() {
            return Err(err("trailing bytes"));
        }
        Ok(Self {
            version,
            metadata,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(err("truncated archive"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| err(e.to_string()))
    }
}
