//! Little-endian primitives shared by the binary containers.

use std::io::{self, Read, Write};

/// Largest id string accepted when decoding. Anything longer is treated as
/// corruption rather than an allocation request.
pub(crate) const MAX_ID_LEN: u32 = 1 << 16;

/// Values are pulled in chunks of this many elements so that a corrupted
/// length field fails on EOF instead of allocating up front.
const CHUNK: usize = 1 << 14;

pub(crate) struct Decoder<R> {
    inner: R,
}

impl<R: Read> Decoder<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner }
    }

    pub(crate) fn array<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    pub(crate) fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn bytes(&mut self, n: usize) -> io::Result<Vec<u8>> {
        let mut out = Vec::new();
        let got = (&mut self.inner).take(n as u64).read_to_end(&mut out)?;
        if got != n {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        Ok(out)
    }

    pub(crate) fn u32s(&mut self, n: usize) -> io::Result<Vec<u32>> {
        self.chunked(n, u32::from_le_bytes)
    }

    pub(crate) fn f32s(&mut self, n: usize) -> io::Result<Vec<f32>> {
        self.chunked(n, f32::from_le_bytes)
    }

    pub(crate) fn f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        self.chunked(n, f64::from_le_bytes)
    }

    fn chunked<T, const W: usize>(&mut self, n: usize, conv: fn([u8; W]) -> T) -> io::Result<Vec<T>> {
        let mut out = Vec::with_capacity(n.min(CHUNK));
        let mut buf = vec![0u8; CHUNK.min(n) * W];
        let mut left = n;
        while left > 0 {
            let take = left.min(CHUNK);
            let chunk = &mut buf[..take * W];
            self.inner.read_exact(chunk)?;
            out.extend(chunk.chunks_exact(W).map(|c| conv(c.try_into().expect("chunk width"))));
            left -= take;
        }
        Ok(out)
    }

    /// True when the underlying reader has no bytes left.
    pub(crate) fn at_eof(&mut self) -> io::Result<bool> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(true),
                Ok(_) => return Ok(false),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
    }
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn put_f32s<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn is_eof(e: &io::Error) -> bool {
    e.kind() == io::ErrorKind::UnexpectedEof
}
