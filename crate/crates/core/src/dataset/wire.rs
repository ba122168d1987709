//! Little-endian primitives shared by every binary format in the crate.

use std::io::{self, Read, Write};

use crate::{Error, Result};

/// Reader that tracks its byte offset so parse errors can point at the
/// exact location of a problem.
pub(crate) struct WireReader<R> {
    inner: R,
    offset: u64,
    record: Option<u64>,
}

impl<R: Read> WireReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            offset: 0,
            record: None,
        }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn set_record(&mut self, record: Option<u64>) {
        self.record = record;
    }

    pub fn error(&self, offset: u64, message: impl Into<String>) -> Error {
        Error::parse(offset, self.record, message)
    }

    pub fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(self.error(
                        start + read as u64,
                        format!(
                            "truncated stream while reading {what} ({} of {} bytes)",
                            read,
                            buf.len()
                        ),
                    ))
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::Io(e)),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    /// Reads `len` bytes without trusting `len` for the up-front allocation,
    /// so a corrupted length field fails as truncation rather than OOM.
    pub fn bytes(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(len.min(1 << 20));
        let got = (&mut self.inner).take(len as u64).read_to_end(&mut buf)?;
        if got < len {
            return Err(self.error(
                self.offset + got as u64,
                format!("truncated stream while reading {what} ({got} of {len} bytes)"),
            ));
        }
        self.offset += len as u64;
        Ok(buf)
    }

    pub fn f32s(&mut self, len: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.bytes(len * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn u16s(&mut self, len: usize, what: &str) -> Result<Vec<u16>> {
        let raw = self.bytes(len * 2, what)?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect())
    }

    pub fn f64s(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.bytes(len * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    /// Fails if any byte remains in the stream.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(self.error(self.offset, "trailing bytes after last record")),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::Io(e)),
            }
        }
    }

    /// Reads a u32-length-prefixed UTF-8 string.
    pub fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.offset;
        let raw = self.bytes(len, what)?;
        String::from_utf8(raw).map_err(|_| self.error(at, format!("{what} is not valid UTF-8")))
    }
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f32s(w: &mut impl Write, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn put_u16s(w: &mut impl Write, values: &[u16]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 2);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn put_string(w: &mut impl Write, s: &str) -> io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}
