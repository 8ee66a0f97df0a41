//! Little-endian binary helpers shared by the file formats.

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        Writer { buf: magic.to_vec() }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn id(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("ids fit in u32"));
    }

    /// Length-prefixed id list.
    pub fn ids(&mut self, ids: &[usize]) {
        self.id(ids.len());
        for &i in ids {
            self.id(i);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(Error::Format(format!("missing {} header", String::from_utf8_lossy(magic))));
        }
        Ok(Reader { buf, pos: 4 })
    }

    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < k {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn id(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    /// Length-prefixed id list with every id below `bound`.
    pub fn ids(&mut self, bound: usize) -> Result<Vec<usize>> {
        let len = self.id()?;
        if len > (self.buf.len() - self.pos) / 4 {
            return Err(Error::Format("id list longer than the file".into()));
        }
        (0..len).map(|_| self.bounded_id(bound)).collect()
    }

    pub fn bounded_id(&mut self, bound: usize) -> Result<usize> {
        let v = self.id()?;
        if v >= bound {
            return Err(Error::Format(format!("id {v} out of range (n = {bound})")));
        }
        Ok(v)
    }

    pub fn count(&mut self, what: &str, max: u64) -> Result<usize> {
        let v = self.u64()?;
        if v > max {
            return Err(Error::Format(format!("{what} = {v} exceeds {max}")));
        }
        Ok(v as usize)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
