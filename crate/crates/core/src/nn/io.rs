//! Binary parameter files.
//!
//! Layout, all little-endian:
//! `b"CLNN"`, version `u32`, layer count `u32`, sizes `u64 × count`,
//! head `u8`, dropout `f64`, parameter count `u64`, parameters `f64 × count`,
//! FNV-1a 64 checksum of every preceding byte.

use super::{param_count, DenseNet, Head};
use crate::error::{Error, Result};
use std::path::Path;

pub const NET_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CLNN";

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn net_to_bytes(net: &DenseNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * net.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&NET_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.sizes.len() as u32).to_le_bytes());
    for &s in &net.sizes {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.push(net.head.code());
    out.extend_from_slice(&net.dropout.to_le_bytes());
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

/// Little-endian reader that reports running out of bytes as a shape error.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Shape(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Length-prefixed `f64` array as written by [`put_f64s`].
    pub(crate) fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Shape("array length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    /// Length-prefixed byte blob as written by [`put_bytes`].
    pub(crate) fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn net_from_bytes(buf: &[u8]) -> Result<DenseNet> {
    let mut c = Cursor::new(buf);
    if c.take(4)? != MAGIC {
        return Err(Error::Corrupt("not a network parameter file".into()));
    }
    let version = c.u32()?;
    if version != NET_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: NET_FORMAT_VERSION,
        });
    }
    let n = c.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Shape(format!("implausible layer count {n}")));
    }
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let s = c.u64()?;
        if s == 0 || s > 1 << 24 {
            return Err(Error::Shape(format!("implausible layer size {s}")));
        }
        sizes.push(s as usize);
    }
    let head = Head::from_code(c.u8()?).ok_or_else(|| Error::Corrupt("unknown head code".into()))?;
    let dropout = c.f64()?;
    let count = c.u64()? as usize;
    let expected = param_count(&sizes);
    if count != expected {
        return Err(Error::Shape(format!(
            "header sizes {sizes:?} imply {expected} parameters, payload declares {count}"
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(c.f64()?);
    }
    let body_end = c.pos();
    let sum = c.u64()?;
    if sum != fnv1a(&buf[..body_end]) {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    if c.pos() != buf.len() {
        return Err(Error::Shape(format!("{} trailing bytes", buf.len() - c.pos())));
    }
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::Corrupt(format!("non-finite parameter at index {i}")));
    }
    DenseNet::from_parts(&sizes, head, dropout, params)
}

pub fn save_params(net: &DenseNet, path: &Path) -> Result<()> {
    crate::util::write_atomic(path, &net_to_bytes(net))
}

pub fn load_params(path: &Path) -> Result<DenseNet> {
    net_from_bytes(&std::fs::read(path)?)
}
