//! Model checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic        8 bytes   "GMCKPT\0\0"
//! version      u32       1
//! config_len   u32
//! config       config_len bytes of JSON (the model configuration)
//! count        u32       number of tensors
//! repeated count times:
//!   name_len   u32
//!   name       UTF-8, e.g. "memory0.keys"
//!   rank       u32
//!   dims       rank × u64
//!   data       product(dims) × f64, row-major
//! ```
//!
//! Values are stored as `f64`, so both `f32` and `f64` models round-trip
//! bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GMCKPT\0\0";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let named = model.named_params();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t, _) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(self.file, None, "truncated checkpoint"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8], file: &str) -> Result<Model<T>> {
    let mut c = Cursor { buf: bytes, file };
    if c.take(8)? != MAGIC {
        return Err(Error::format(file, None, "not a model checkpoint"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(file, None, format!("unsupported checkpoint version {version}")));
    }
    let len = c.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(c.take(len)?).map_err(|e| Error::format(file, None, format!("bad config: {e}")))?;
    let mut model = Model::<T>::new(config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t, _)| (n, t.shape().to_vec()))
        .collect();
    let count = c.u32()? as usize;
    if count != expected.len() {
        return Err(Error::format(
            file,
            None,
            format!("{count} tensors stored, configuration needs {}", expected.len()),
        ));
    }
    let mut loaded = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8_lossy(c.take(name_len)?).into_owned();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| Ok(c.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        if &name != want_name || &shape != want_shape {
            return Err(Error::format(
                file,
                None,
                format!("tensor {name} {shape:?} where {want_name} {want_shape:?} was expected"),
            ));
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        loaded.push(Tensor::new(shape, data)?);
    }
    if !c.buf.is_empty() {
        return Err(Error::format(file, None, "trailing bytes after last tensor"));
    }
    for (dst, src) in model.params_mut().into_iter().zip(loaded) {
        *dst = src;
    }
    Ok(model)
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes, &path.display().to_string())
}
