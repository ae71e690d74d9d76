use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Little-endian cursor over a whole file, reporting byte offsets on error.
pub(crate) struct ByteReader {
    buf: Vec<u8>,
    pos: usize,
    path: PathBuf,
}

impl ByteReader {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            buf: std::fs::read(path)?,
            pos: 0,
            path: path.to_path_buf(),
        })
    }

    pub fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.display().to_string(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        let remaining = self.buf.len() - self.pos;
        if len > remaining {
            return Err(self.fail(
                self.pos,
                format!("truncated {what}: need {len} bytes, {remaining} left"),
            ));
        }
        let start = self.pos;
        self.pos += len;
        Ok(&self.buf[start..self.pos])
    }

    pub fn magic(&mut self, magic: &[u8]) -> Result<()> {
        let got = self.take(magic.len(), "header")?;
        if got != magic {
            return Err(self.fail(0, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// Reads a u64 that must fit in memory-sized counts.
    pub fn count(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| self.fail(at, format!("{what} {v} is too large")))
    }

    /// Reads `len` f32 values, rejecting non-finite ones.
    pub fn f32s(&mut self, len: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = len
            .checked_mul(4)
            .ok_or_else(|| self.fail(self.pos, format!("{what} size overflows")))?;
        let start = self.pos;
        let raw = self.take(bytes, what)?;
        let out: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(self.fail(start + 4 * i, format!("non-finite value in {what}")));
        }
        Ok(out)
    }

    pub fn u64s(&mut self, len: usize, what: &str) -> Result<Vec<u64>> {
        let bytes = len
            .checked_mul(8)
            .ok_or_else(|| self.fail(self.pos, format!("{what} size overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_u64(w: &mut dyn Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f32s(w: &mut dyn Write, values: impl IntoIterator<Item = f32>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
