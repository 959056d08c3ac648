//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! "FADC"                       4 bytes magic
//! version                      u32 (currently 1)
//! config length, config text   u32, UTF-8 bytes
//! tensor count                 u32
//! per tensor:
//!   name length, name          u32, UTF-8 bytes
//!   element type               u8 (0 = f64, 1 = f32)
//!   rank, extents              u32, rank × u64
//!   values                     product(extents) × 8 or 4 bytes
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FADC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckpointDtype {
    #[default]
    F64,
    /// Halves the file size; values are rounded, so reloads are not exact.
    F32,
}

impl CheckpointDtype {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f64" => Some(Self::F64),
            "f32" => Some(Self::F32),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::F64 => "f64",
            Self::F32 => "f32",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Self::F64 => 0,
            Self::F32 => 1,
        }
    }
}

pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<NamedTensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Invariant(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(ck: &Checkpoint, dtype: CheckpointDtype) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, ck.config_text.len(), "config length")?;
    out.extend_from_slice(ck.config_text.as_bytes());
    put_u32(&mut out, ck.tensors.len(), "tensor count")?;
    for (name, shape, values) in &ck.tensors {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape(format!("tensor {name}: shape {shape:?} vs {} values", values.len())));
        }
        put_u32(&mut out, name.len(), "name length")?;
        out.extend_from_slice(name.as_bytes());
        out.push(dtype.tag());
        put_u32(&mut out, shape.len(), "rank")?;
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match dtype {
            CheckpointDtype::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            CheckpointDtype::F32 => values.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let start = self.pos;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Format { offset: start as u64, msg: format!("{what} is not UTF-8") })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic: not a checkpoint file".into() });
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Format {
            offset: at as u64,
            msg: format!("checkpoint version {version} is not supported (this build reads version {VERSION})"),
        });
    }
    let config_text = r.text("config text")?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.text("tensor name")?;
        let tag_at = r.pos;
        let width = match r.take(1, "element type")?[0] {
            0 => 8,
            1 => 4,
            t => return Err(Error::Format { offset: tag_at as u64, msg: format!("unknown element type {t} for {name}") }),
        };
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(16));
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = r.u64("extent")?;
            let d = usize::try_from(d).map_err(|_| r.err("extent too large"))?;
            n = n.checked_mul(d).ok_or_else(|| r.err(format!("tensor {name} is too large")))?;
            shape.push(d);
        }
        let len = n.checked_mul(width).ok_or_else(|| r.err(format!("tensor {name} is too large")))?;
        let raw = r.take(len, &format!("values of {name}"))?;
        let values = if width == 8 {
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect()
        } else {
            raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4")))).collect()
        };
        tensors.push((name, shape, values));
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config_text, tensors })
}

pub fn save(path: &Path, ck: &Checkpoint, dtype: CheckpointDtype) -> Result<()> {
    let bytes = encode(ck, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
