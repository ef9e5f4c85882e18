//! Flat binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SEQRECKP"
//! version  u32      1
//! dtype    u8       0 = f64, 1 = f32
//! count    u32      number of parameters
//! repeated count times:
//!   name_len u32, name (utf-8)
//!   ndim     u32, dims u64 * ndim
//!   values   product(dims) * sizeof(dtype) bytes
//! ```

use std::path::Path;

use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SEQRECKP";
const VERSION: u32 = 1;

fn dtype_code<F: Real>() -> u8 {
    if F::DTYPE == "f64" {
        0
    } else {
        1
    }
}

pub fn encode<F: Real>(store: &ParamStore<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype_code::<F>());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let t = store.value(id);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&F::to_le_vec(t.data()));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
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
}

/// Overwrite every parameter of `store` from an encoded checkpoint. Names and
/// shapes must match exactly; values stored in the other precision are cast.
pub fn decode_into<F: Real>(bytes: &[u8], store: &mut ParamStore<F>) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dtype = r.take(1)?[0];
    let width = match dtype {
        0 => 8,
        1 => 4,
        d => return Err(Error::Checkpoint(format!("unknown dtype code {d}"))),
    };
    let count = r.u32()? as usize;
    if count != store.len() {
        return Err(Error::Checkpoint(format!("checkpoint has {count} parameters, model has {}", store.len())));
    }
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name:?}")))?;
        if store.value(id).shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {shape:?} vs model {:?}",
                store.value(id).shape()
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * width)?;
        let values: Vec<F> = if width == 8 {
            f64::from_le_slice(raw).into_iter().map(F::of).collect()
        } else {
            f32::from_le_slice(raw).into_iter().map(|v| F::of(v as f64)).collect()
        };
        store.set(id, &values)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(())
}

pub fn save<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load_into<F: Real>(path: &Path, store: &mut ParamStore<F>) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_into(&bytes, store)
}
