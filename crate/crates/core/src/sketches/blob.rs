//! Versioned binary snapshots of sketch state.
//!
//! Layout (little endian): magic `SFSK`, `u16` version, `u8` kind, `u64`
//! seed, `u64` lane, then kind-specific fields. Vectors are written as a
//! `u64` length followed by the elements. Hash functions are not stored;
//! they are re-derived from the seed and lane.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

const MAGIC: &[u8; 4] = b"SFSK";
const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum SketchKind {
    CountSketch = 1,
    F2Tracker = 2,
    Morris = 3,
}

pub(crate) struct BlobWriter {
    buf: Vec<u8>,
}

impl BlobWriter {
    pub fn new(kind: SketchKind, rng: &SeededRng) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(kind as u8);
        buf.extend_from_slice(&rng.seed().to_le_bytes());
        buf.extend_from_slice(&rng.lane().to_le_bytes());
        Self { buf }
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, v: &[f64]) -> &mut Self {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
        self
    }

    pub fn u64s(&mut self, v: &[u64]) -> &mut Self {
        self.u64(v.len() as u64);
        for &x in v {
            self.u64(x);
        }
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

pub(crate) struct BlobReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    /// Checks the header and returns the reader with the stored generator.
    pub fn open(data: &'a [u8], kind: SketchKind) -> Result<(Self, SeededRng)> {
        let mut r = Self { data, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Blob("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Blob(format!("unsupported version {version}")));
        }
        let found = r.take(1)?[0];
        if found != kind as u8 {
            return Err(Error::Blob(format!("expected kind {}, found {found}", kind as u8)));
        }
        let seed = r.u64()?;
        let lane = r.u64()?;
        Ok((r, SeededRng::new(seed, lane)))
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Blob("truncated".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let len = self.u64()? as usize;
        if len > (self.data.len() - self.pos) / 8 {
            return Err(Error::Blob("length prefix exceeds blob".into()));
        }
        Ok(len)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.len()?;
        (0..len).map(|_| self.f64()).collect()
    }

    pub fn u64s(&mut self) -> Result<Vec<u64>> {
        let len = self.len()?;
        (0..len).map(|_| self.u64()).collect()
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Blob("trailing bytes".into()));
        }
        Ok(())
    }
}
