//! On-disk cache of per-graph diffusion matrices.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes   "GMDIFF\0\0"
//! version    u32       1
//! name_len   u32
//! name       name_len bytes, UTF-8 dataset name
//! variant    u8        0 = rwr, 1 = adjacency, 2 = normalized_adjacency
//! p          f64       restart probability
//! count      u64       number of graphs
//! repeated count times:
//!   n        u64
//!   data     n*n f64, row-major; row i is node i's diffusion row
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{diffusion_rows, DiffusionConfig, EmbeddingVariant};
use crate::dataset::DatasetTable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GMDIFF\0\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CacheKey {
    pub dataset: String,
    pub variant: EmbeddingVariant,
    pub restart_prob: f64,
}

impl CacheKey {
    pub fn new(dataset: &str, cfg: &DiffusionConfig) -> Self {
        CacheKey {
            dataset: dataset.to_string(),
            variant: cfg.variant,
            restart_prob: cfg.restart_prob,
        }
    }

    /// File name derived from the key, e.g. `ENZYMES.rwr.p0.1.gmdiff`.
    pub fn file_name(&self) -> String {
        let variant = match self.variant {
            EmbeddingVariant::Rwr => "rwr",
            EmbeddingVariant::Adjacency => "adjacency",
            EmbeddingVariant::NormalizedAdjacency => "normalized_adjacency",
        };
        let safe: String = self
            .dataset
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!("{safe}.{variant}.p{}.gmdiff", self.restart_prob)
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(self.file_name())
    }
}

fn variant_code(v: EmbeddingVariant) -> u8 {
    match v {
        EmbeddingVariant::Rwr => 0,
        EmbeddingVariant::Adjacency => 1,
        EmbeddingVariant::NormalizedAdjacency => 2,
    }
}

pub fn write_cache(path: &Path, key: &CacheKey, matrices: &[Tensor<f64>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(key.dataset.len() as u32).to_le_bytes())?;
    w.write_all(key.dataset.as_bytes())?;
    w.write_all(&[variant_code(key.variant)])?;
    w.write_all(&key.restart_prob.to_le_bytes())?;
    w.write_all(&(matrices.len() as u64).to_le_bytes())?;
    for m in matrices {
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    file: String,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::format(&self.file, None, "truncated diffusion cache"));
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
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a cache, returning `None` when it was built for a different key.
pub fn read_cache(path: &Path, key: &CacheKey) -> Result<Option<Vec<Tensor<f64>>>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader {
        buf: &bytes,
        file: path.display().to_string(),
    };
    if r.take(8)? != MAGIC {
        return Err(Error::format(&r.file, None, "not a diffusion cache"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(&r.file, None, format!("unsupported cache version {version}")));
    }
    let name_len = r.u32()? as usize;
    let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
    let variant = r.take(1)?[0];
    let p = r.f64()?;
    if name != key.dataset || variant != variant_code(key.variant) || p.to_bits() != key.restart_prob.to_bits() {
        return Ok(None);
    }
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u64()? as usize;
        let data = (0..n * n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push(Tensor::matrix(n, n, data)?);
    }
    Ok(Some(out))
}

/// Diffusion rows for every graph, read from `dir` when cached and
/// computed (then written) otherwise.
pub fn load_or_compute(ds: &DatasetTable, cfg: &DiffusionConfig, dir: Option<&Path>) -> Result<Vec<Tensor<f64>>> {
    let key = CacheKey::new(&ds.name, cfg);
    if let Some(dir) = dir {
        let path = key.path_in(dir);
        if path.exists() {
            if let Some(m) = read_cache(&path, &key)? {
                if m.len() == ds.len()
                    && m.iter().zip(ds.graphs()).all(|(m, g)| m.rows() == g.node_count())
                {
                    return Ok(m);
                }
            }
        }
    }
    let matrices = ds
        .graphs()
        .iter()
        .map(|g| diffusion_rows(g, cfg))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        write_cache(&key.path_in(dir), &key, &matrices)?;
    }
    Ok(matrices)
}
