//! Little-endian framing helpers shared by the checkpoint and bitstream formats.

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    /// `u32` length followed by the bytes.
    pub fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }

    pub fn shape(&mut self, dims: &[usize]) {
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u32(d as u32);
        }
    }
}

/// Cursor over a byte slice; every read failure is reported through `err`.
pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    err: fn(String) -> Error,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8], err: fn(String) -> Error) -> Self {
        Self { data, pos: 0, err }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err((self.err)(msg.into()))
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => self.fail(format!(
                "truncated while reading {what} at byte {} ({n} bytes needed, {} left)",
                self.pos,
                self.data.len() - self.pos
            )),
        }
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn blob(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    pub fn shape(&mut self, what: &str) -> Result<Vec<usize>> {
        let rank = self.u32(what)? as usize;
        if rank > 8 {
            return self.fail(format!("{what}: implausible rank {rank}"));
        }
        (0..rank)
            .map(|_| self.u32(what).map(|d| d as usize))
            .collect()
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let b = self.blob(what)?;
        match std::str::from_utf8(b) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.fail(format!("{what} is not valid UTF-8")),
        }
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return self.fail(format!("{} trailing bytes", self.data.len() - self.pos));
        }
        Ok(())
    }
}
