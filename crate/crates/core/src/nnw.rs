//! `NNW1` named-tensor container.
//!
//! Little-endian layout: magic `NNW1`, `u32` tensor count, then per tensor a
//! `u16` name length, UTF-8 name, `u8` rank, `u32` dims and `f32` data in
//! row-major order. Values are promoted to `f64` on load.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NNW1";

/// Ordered list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensors {
    entries: Vec<(String, Tensor)>,
}

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`get`](Self::get) but a missing tensor or wrong shape is a format error.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::format("NNW1", format!("missing tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::format(
                "NNW1",
                format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape()),
            ));
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32::try_from(self.entries.len()).map_err(|_| Error::invalid("too many tensors"))?.to_le_bytes());
        for (name, t) in &self.entries {
            let nb = name.as_bytes();
            let nl = u16::try_from(nb.len()).map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&nl.to_le_bytes());
            out.extend_from_slice(nb);
            let rank = u8::try_from(t.shape().len()).map_err(|_| Error::invalid("tensor rank above 255"))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::invalid("tensor extent above u32"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("NNW1", "bad magic"));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let nl = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; nl];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("NNW1", "tensor name is not UTF-8"))?;
            let mut rank = [0u8; 1];
            read_exact(&mut r, &mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u32(&mut r)? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format("NNW1", format!("tensor `{name}` is too large")))?;
            if n.checked_mul(4).is_none_or(|b| b > r.len()) {
                return Err(Error::format("NNW1", format!("tensor `{name}` data truncated")));
            }
            let (data, rest) = r.split_at(n * 4);
            r = rest;
            let data = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::format("NNW1", format!("tensor `{name}`: {e}")))?;
            entries.push((name, t));
        }
        if !r.is_empty() {
            return Err(Error::format("NNW1", format!("{} trailing bytes", r.len())));
        }
        Ok(NamedTensors { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::format("NNW1", "unexpected end of data"))
}

fn read_u16(r: &mut &[u8]) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
