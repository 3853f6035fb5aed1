//! Little-endian helpers shared by the binary file formats.

use std::io::{ErrorKind, Read};

use crate::error::{Error, Result};

pub(crate) struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Reader { inner }
    }

    pub fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Format("file is truncated".into()),
            _ => Error::Io(e),
        })
    }

    pub fn magic(&mut self, magic: &[u8; 4], what: &str) -> Result<()> {
        let mut m = [0u8; 4];
        self.bytes(&mut m)?;
        if &m != magic {
            return Err(Error::Format(format!(
                "not a {what} file (magic {:?}, expected {:?})",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.bytes(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; n.checked_mul(4).ok_or_else(|| Error::Format("count overflow".into()))?];
        self.bytes(&mut buf)?;
        Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    pub fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>> {
        let mut buf = vec![0u8; n.checked_mul(4).ok_or_else(|| Error::Format("count overflow".into()))?];
        self.bytes(&mut buf)?;
        Ok(buf.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

/// Reads `n` packed `[f32; 4]` records.
pub(crate) fn read_exact_array<R: Read>(r: &mut Reader<R>, n: usize) -> Result<Vec<[f32; 4]>> {
    let flat = r.f32_vec(n.checked_mul(4).ok_or_else(|| Error::Format("count overflow".into()))?)?;
    Ok(flat.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
}

pub(crate) fn put_f32s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}
