//! `CAW1` weight container.
//!
//! ```text
//! "CAW1"                          4 bytes
//! config length                   u64 LE
//! config                          canonical JSON (ModelConfig)
//! tensor count                    u64 LE
//! repeated per tensor, in layout order:
//!   name length                   u32 LE
//!   name                          UTF-8
//!   rank                          u32 LE
//!   dims                          rank × u64 LE
//!   values                        product(dims) × f64 LE, row-major
//! ```
//! Nothing may follow the last tensor.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Real;

use super::{tensor_layout, MMDiTWeights, ModelConfig};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CAW1";

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Self { buf, pos: 0, kind }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.kind,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(self.kind, "length overflows usize"))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.kind, "tensor too large"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.kind,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

impl<T: Real> MMDiTWeights<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        let json = self.config.canonical_json();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        let tensors = self.named_tensors();
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, dims, data) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out
    }

    /// Parses a `CAW1` buffer, rejecting tensors that disagree with the
    /// embedded config.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "CAW1");
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::format("CAW1", "bad magic"));
        }
        let json_len = r.len_u64()?;
        let config: ModelConfig = serde_json::from_slice(r.take(json_len)?)?;
        config.validate()?;
        let expected: BTreeMap<String, Vec<usize>> = tensor_layout(&config).into_iter().collect();

        let count = r.len_u64()?;
        if count != expected.len() {
            return Err(Error::format(
                "CAW1",
                format!("expected {} tensors, found {count}", expected.len()),
            ));
        }
        let mut tensors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format("CAW1", "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.len_u64()).collect::<Result<Vec<_>>>()?;
            match expected.get(&name) {
                None => return Err(Error::format("CAW1", format!("unexpected tensor {name}"))),
                Some(want) if *want != dims => {
                    return Err(Error::format(
                        "CAW1",
                        format!("tensor {name} has dims {dims:?}, config implies {want:?}"),
                    ))
                }
                Some(_) => {}
            }
            let n = dims.iter().product();
            let values = r.f64s(n)?;
            if tensors.insert(name.clone(), values).is_some() {
                return Err(Error::format("CAW1", format!("duplicate tensor {name}")));
            }
        }
        r.finish()?;
        Self::build(&config, |name, _| {
            tensors
                .remove(name)
                .map(|v| v.into_iter().map(T::from_f64_lossy).collect())
                .ok_or_else(|| Error::format("CAW1", format!("missing tensor {name}")))
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
