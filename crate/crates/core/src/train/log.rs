use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StoneError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Equality ignoring wall-clock time.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.len() == other.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }

    /// CSV with header `epoch,train_loss,val_loss,lr,seconds`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| StoneError::Contract(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| StoneError::Contract(e.to_string()))?;
        let mut text = String::from_utf8(bytes).map_err(|e| StoneError::Contract(e.to_string()))?;
        if self.records.is_empty() {
            text = "epoch,train_loss,val_loss,lr,seconds\n".into();
        }
        Ok(text)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| StoneError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| StoneError::Format {
            offset: 0,
            detail: format!("{}: {e}", path.display()),
        })?;
        let mut records = Vec::new();
        for (i, rec) in r.deserialize().enumerate() {
            records.push(rec.map_err(|e| StoneError::Ingestion {
                row: i + 2,
                detail: e.to_string(),
            })?);
        }
        Ok(TrainLog { records })
    }
}
