//! Binary field pack: little-endian `"STNF"`, version `u32`, `P u32`, `T u32`,
//! `P×[lat, lon]` as `f64` degrees, then `T` frames of `P` `f32` values.

use std::path::Path;

use crate::error::{Result, StoneError};

pub const MAGIC: &[u8; 4] = b"STNF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Raw contents of a field pack.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPack {
    pub coords: Vec<[f64; 2]>,
    /// Frame-major `T×P` values.
    pub frames: Vec<f32>,
}

impl FieldPack {
    pub fn new(coords: Vec<[f64; 2]>, frames: Vec<f32>) -> Result<Self> {
        let p = coords.len();
        if p == 0 || !frames.len().is_multiple_of(p) || frames.is_empty() {
            return Err(StoneError::Contract(format!(
                "{} values do not form whole frames of {p} points",
                frames.len()
            )));
        }
        if p > u32::MAX as usize || frames.len() / p > u32::MAX as usize {
            return Err(StoneError::Contract("field pack dimensions exceed u32".into()));
        }
        Ok(FieldPack { coords, frames })
    }

    pub fn points(&self) -> usize {
        self.coords.len()
    }

    pub fn frames_len(&self) -> usize {
        self.frames.len() / self.coords.len()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let p = self.points();
        &self.frames[t * p..(t + 1) * p]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.coords.len() * 16 + self.frames.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.points() as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames_len() as u32).to_le_bytes());
        for [lat, lon] in &self.coords {
            out.extend_from_slice(&lat.to_le_bytes());
            out.extend_from_slice(&lon.to_le_bytes());
        }
        for v in &self.frames {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(StoneError::Format {
                offset: 0,
                detail: "bad magic, expected STNF".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(StoneError::Format {
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let p = r.u32()? as usize;
        let t = r.u32()? as usize;
        if p == 0 || t == 0 {
            return Err(StoneError::Format {
                offset: 8,
                detail: format!("empty pack: P={p}, T={t}"),
            });
        }
        let expected = HEADER_LEN as u64 + 16 * p as u64 + 4 * p as u64 * t as u64;
        if (bytes.len() as u64) < expected {
            return Err(StoneError::Format {
                offset: bytes.len() as u64,
                detail: format!("truncated: {} bytes, expected {expected}", bytes.len()),
            });
        }
        if bytes.len() as u64 > expected {
            return Err(StoneError::Format {
                offset: expected,
                detail: format!("{} trailing bytes", bytes.len() as u64 - expected),
            });
        }
        let mut coords = Vec::with_capacity(p);
        for _ in 0..p {
            coords.push([r.f64()?, r.f64()?]);
        }
        let mut frames = Vec::with_capacity(p * t);
        for _ in 0..p * t {
            frames.push(r.f32()?);
        }
        FieldPack::new(coords, frames)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| StoneError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| StoneError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(StoneError::Format {
                offset: self.bytes.len() as u64,
                detail: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
