//! Flat binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "MPPACKPT"
//! version      u32      1
//! config       u32 count, then count x (u32 len, key utf-8, u32 len, value utf-8)
//! parameters   u32 count, then count x
//!                (u32 len, name utf-8, u32 ndim, ndim x u64 dim, f64 values)
//! ```
//!
//! Parameters appear in canonical order; values are raw IEEE-754 bits, so a
//! save/load round trip is exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::forward::Model;
use crate::model::params::ModelParams;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"MPPACKPT";
pub const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let pairs = model.config.to_pairs();
    put_u32(&mut buf, pairs.len() as u32);
    for (k, v) in &pairs {
        put_str(&mut buf, k);
        put_str(&mut buf, v);
    }
    let named = model.params.named_tensors();
    put_u32(&mut buf, named.len() as u32);
    for (name, t) in named {
        put_str(&mut buf, &name);
        put_u32(&mut buf, t.shape().len() as u32);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid utf-8".to_string())
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |reason: String| Error::format(path, reason);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(bad)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32().map_err(bad)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n_pairs = r.u32().map_err(bad)?;
    let mut pairs = Vec::new();
    for _ in 0..n_pairs {
        let k = r.string().map_err(bad)?;
        let v = r.string().map_err(bad)?;
        pairs.push((k, v));
    }
    let config = ModelConfig::from_pairs(&pairs)?;
    let mut params = ModelParams::init(&config)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32().map_err(bad)? as usize;
    if count != expected.len() {
        return Err(bad(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut values = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let name = r.string().map_err(bad)?;
        if &name != want_name {
            return Err(bad(format!("expected tensor {want_name}, found {name}")));
        }
        let ndim = r.u32().map_err(bad)? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(bad)?;
        if &shape != want_shape {
            return Err(bad(format!("{name}: shape {shape:?}, expected {want_shape:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8).map_err(bad)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    params.assign(values)?;
    Model::from_parts(config, params)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
