//! `GPM1` model files, `GPE1` ensemble files and text hard-data files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Ensemble, GridModel, HardData, ModelKind};
use crate::error::{Error, Result};

const GPM_MAGIC: &[u8; 4] = b"GPM1";
const GPE_MAGIC: &[u8; 4] = b"GPE1";

fn eof(format: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(format, "unexpected end of data")
        } else {
            Error::Io(e)
        }
    }
}

impl GridModel {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(GPM_MAGIC)?;
        w.write_all(&(self.nx as u32).to_le_bytes())?;
        w.write_all(&(self.ny as u32).to_le_bytes())?;
        w.write_all(&[self.kind.code()])?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let err = eof("GPM1");
        let mut head = [0u8; 13];
        r.read_exact(&mut head).map_err(&err)?;
        if &head[..4] != GPM_MAGIC {
            return Err(Error::format("GPM1", "bad magic"));
        }
        let nx = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let ny = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let kind = ModelKind::from_code(head[12]).ok_or_else(|| Error::format("GPM1", format!("unknown kind {}", head[12])))?;
        let n = nx
            .checked_mul(ny)
            .filter(|&n| n > 0 && n <= 1 << 28)
            .ok_or_else(|| Error::format("GPM1", format!("implausible extents {nx}x{ny}")))?;
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf).map_err(&err)?;
        let values = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        GridModel::new(nx, ny, values, kind).map_err(|e| Error::format("GPM1", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let m = Self::read_from(&mut r)?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format("GPM1", "trailing bytes"));
        }
        Ok(m)
    }
}

impl Ensemble {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(GPE_MAGIC)?;
        w.write_all(&(self.models.len() as u32).to_le_bytes())?;
        for m in &self.models {
            m.write_to(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut models = Vec::new();
        for_each_model(path, |m| {
            models.push(m);
            Ok(())
        })?;
        Ensemble::new(models, format!("file:{}", path.display()))
    }
}

/// Streams the models of a `GPE1` file without holding the whole ensemble.
pub(crate) fn for_each_model(path: &Path, mut f: impl FnMut(GridModel) -> Result<()>) -> Result<usize> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut head = [0u8; 8];
    r.read_exact(&mut head).map_err(eof("GPE1"))?;
    if &head[..4] != GPE_MAGIC {
        return Err(Error::format("GPE1", "bad magic"));
    }
    let count = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    for _ in 0..count {
        f(GridModel::read_from(&mut r)?)?;
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format("GPE1", "trailing bytes"));
    }
    Ok(count)
}

/// Parses `i j value` lines; blank lines and `#` comments are skipped.
pub fn read_hard_data(path: impl AsRef<Path>, nx: usize, ny: usize) -> Result<HardData> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut wells = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::format("hard data", format!("line {}: expected `i j value`, got `{line}`", ln + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        let i: usize = parts[0].parse().map_err(|_| bad())?;
        let j: usize = parts[1].parse().map_err(|_| bad())?;
        let v: f64 = parts[2].parse().map_err(|_| bad())?;
        wells.push((i, j, v));
    }
    HardData::from_wells(nx, ny, &wells)
}

pub fn write_hard_data(path: impl AsRef<Path>, hd: &HardData, nx: usize) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for &(idx, v) in hd.entries() {
        writeln!(w, "{} {} {}", idx % nx, idx / nx, v)?;
    }
    w.flush()?;
    Ok(())
}
