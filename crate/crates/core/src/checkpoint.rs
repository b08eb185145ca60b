//! Binary checkpoint, little-endian:
//!
//! ```text
//! "STNC" | version u32
//! json_len u32 | json (model config, optional run config, label)
//! n_params u32 | per parameter: name_len u32, name, rank u32, dims u64×rank, f64 payload
//! N u32 | N sensor means f64 | N sensor stds f64 | target mean f64 | target std f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RunConfig};
use crate::data::NormStats;
use crate::error::{Result, StoneError};
use crate::operator::StoneModel;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"STNC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    label: String,
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<RunConfig>,
}

/// A trained model with the statistics needed to map outputs back to physical units.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub label: String,
    pub model: StoneModel,
    pub norm: NormStats,
    pub run: Option<RunConfig>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            label: self.label.clone(),
            model: self.model.config().clone(),
            run: self.run.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| StoneError::Contract(e.to_string()))?;
        let params = self.model.params();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_len(&mut out, json.len())?;
        out.extend_from_slice(&json);
        put_len(&mut out, params.len())?;
        for (name, t) in params.iter() {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_len(&mut out, t.dims().len())?;
            for &d in t.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let norm = &self.norm;
        put_len(&mut out, norm.n_sensors())?;
        for v in norm.sensor_mean.iter().chain(&norm.sensor_std) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&norm.target_mean.to_le_bytes());
        out.extend_from_slice(&norm.target_std.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.error_at(0, "bad magic, expected STNC"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let json_len = r.u32()? as usize;
        let json_at = r.pos;
        let header: Header = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| r.error_at(json_at as u64, format!("config block: {e}")))?;

        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.error_at(name_at as u64, "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims_at = r.pos;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = match numel {
                Some(n) if n > 0 && n.checked_mul(8).is_some_and(|b| b <= r.remaining()) => n,
                _ => return Err(r.error_at(dims_at as u64, format!("bad dims {dims:?} for `{name}`"))),
            };
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params
                .insert(name, Tensor::from_vec(&dims, data)?)
                .map_err(|e| r.error_at(name_at as u64, e.to_string()))?;
        }

        let n = r.u32()? as usize;
        if n.checked_mul(16).is_none_or(|b| b > r.remaining()) {
            return Err(r.error_at(r.pos as u64 - 4, format!("bad sensor count {n}")));
        }
        let sensor_mean = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let sensor_std = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let target_mean = r.f64()?;
        let target_std = r.f64()?;
        if r.remaining() != 0 {
            return Err(r.error_at(r.pos as u64, format!("{} trailing bytes", r.remaining())));
        }
        let model = StoneModel::with_params(header.model, params)?;
        if n != model.config().branch.n_sensors {
            return Err(StoneError::Contract(format!(
                "normalization covers {n} sensors, model expects {}",
                model.config().branch.n_sensors
            )));
        }
        Ok(Checkpoint {
            label: header.label,
            model,
            norm: NormStats {
                sensor_mean,
                sensor_std,
                target_mean,
                target_std,
            },
            run: header.run,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| StoneError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| StoneError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| StoneError::Contract(format!("length {n} exceeds u32")))?;
    put_u32(out, v);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: u64, detail: impl Into<String>) -> StoneError {
        StoneError::Format {
            offset,
            detail: detail.into(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.error_at(
                self.bytes.len() as u64,
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
