//! Plain little-endian binary containers.
//!
//! A `TGV1` record is a single f32 array:
//!
//! ```text
//! "TGV1" | rank: u32 | extents: rank x u32 | payload: prod(extents) x f32
//! ```
//!
//! A checkpoint (`TGCK`) is an ordered list of named `TGV1` records:
//!
//! ```text
//! "TGCK" | version: u32 = 1 | count: u32 | { name_len: u32 | name: utf-8 | TGV1 record }*
//! ```

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"TGV1";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TGCK";
const MAX_RANK: usize = 8;

/// One named array inside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.records.push(Record { name: name.into(), shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Record> {
        self.get(name).ok_or_else(|| Error::Checkpoint(format!("missing record {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            write_tensor_into(&mut out, &r.shape, &r.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad checkpoint magic".into()));
        }
        let version = cur.u32()?;
        if version != 1 {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Checkpoint("record name is not utf-8".into()))?
                .to_string();
            let (shape, data) = read_tensor_at(&mut cur)?;
            records.push(Record { name, shape, data });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last record".into()));
        }
        Ok(Self { records })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::TruncatedData {
            needed: (self.pos as u64).saturating_add(n as u64),
            available: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn write_tensor_into(out: &mut Vec<u8>, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor_at(cur: &mut Cursor<'_>) -> Result<(Vec<usize>, Vec<f32>)> {
    if cur.take(4)? != TENSOR_MAGIC {
        return Err(Error::BadHeader("expected TGV1 record".into()));
    }
    let rank = cur.u32()? as usize;
    if rank > MAX_RANK {
        return Err(Error::BadRank(rank));
    }
    let shape = (0..rank).map(|_| cur.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or(Error::TruncatedData { needed: u64::MAX, available: cur.bytes.len() as u64 })?;
    let payload = cur.take(count * 4)?;
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((shape, data))
}

/// Encode one array as a standalone `TGV1` file.
pub fn write_tensor(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if shape.len() > MAX_RANK {
        return Err(Error::BadRank(shape.len()));
    }
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::ShapeMismatch(format!("shape {shape:?} vs {} values", data.len())));
    }
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + 4 * data.len());
    write_tensor_into(&mut out, shape, data);
    Ok(out)
}

pub fn read_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let out = read_tensor_at(&mut cur)?;
    if cur.pos != bytes.len() {
        return Err(Error::BadHeader("trailing bytes after TGV1 payload".into()));
    }
    Ok(out)
}
