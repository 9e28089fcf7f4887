//! Binary checkpoints.
//!
//! Layout, all integers `u64` little-endian: the magic `CSQ1`; the length of
//! the model configuration as `key=value` text, then the text; the number of
//! tensors; per tensor the name length, name bytes, rank, dims, and the
//! values as `f64` little-endian in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CSQ1";

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let config = model.config().to_kv();
    put_u64(&mut out, config.len() as u64);
    out.extend_from_slice(config.as_bytes());
    put_u64(&mut out, model.params().len() as u64);
    for (name, t) in model.params().iter() {
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, t.rank() as u64);
        for &dim in t.shape() {
            put_u64(&mut out, dim as u64);
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("implausible length {x}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("text is not UTF-8".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let config = ModelConfig::from_kv(&r.string()?)?;
    let count = r.len()?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.len()?;
        let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.push((name, Tensor::new(&dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut model = Model::new(config, 0)?;
    model.params_mut().load(entries)?;
    Ok(model)
}

pub fn write(model: &Model, mut w: impl Write) -> Result<()> {
    w.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn read(mut r: impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::Mechanism;
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = ModelConfig::tiny(Mechanism::DynamicConv, 1, 4, 2, 7);
        cfg.d_ff = 6;
        let m = Model::new(cfg, 11).unwrap();
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..4], b"CSQ1");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let m = Model::new(ModelConfig::tiny(Mechanism::LightConv, 1, 4, 2, 7), 1).unwrap();
        let bytes = to_bytes(&m);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
