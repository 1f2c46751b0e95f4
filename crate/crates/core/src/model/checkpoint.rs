//! Binary checkpoints: little-endian, all values stored as f64.
//!
//! Layout: `SCPE`, u32 version, u32-length config text, u32-length config
//! hash, u32 parameter count, then per parameter a u32-length name, u32 rank,
//! u64 dims and f64 values.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, ScapeModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SCPE";
const VERSION: u32 = 1;

pub fn encode<S: Scalar>(model: &ScapeModel<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config();
    put_str(&mut out, &cfg.to_text());
    put_str(&mut out, &cfg.hash());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

/// Decodes a checkpoint. When `expected` is given its hash must match the
/// stored one.
pub fn decode<S: Scalar>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<ScapeModel<S>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let text = r.string()?;
    let stored = r.string()?;
    let config = ModelConfig::from_text(&text)?;
    if config.hash() != stored {
        return Err(Error::Checkpoint("config text does not match its stored hash".into()));
    }
    if let Some(exp) = expected {
        let expected = exp.hash();
        if expected != stored {
            return Err(Error::HashMismatch { stored, expected });
        }
    }
    let n = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Checkpoint(format!("bad shape for {name}")))?;
        let data = (0..count).map(|_| r.f64().map(S::lit)).collect::<Result<Vec<_>>>()?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let mut model = ScapeModel::new(config, 0)?;
    model.params_mut().load_from(entries)?;
    Ok(model)
}

pub fn save<S: Scalar>(model: &ScapeModel<S>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<ScapeModel<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes, expected)
}
