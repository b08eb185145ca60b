//! Training regimen: MSE loss, Adam, reduce-on-plateau, early stopping and the epoch loop.

mod engine;
mod log;
mod optim;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Result, StoneError};

pub use engine::{evaluate_loss, train, train_with, StopReason, TrainOutcome};
pub use log::{EpochRecord, TrainLog};
pub use optim::AdamState;
pub use schedule::{EarlyStopper, PlateauScheduler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_lr0")]
    pub lr0: f64,
    #[serde(default = "TrainConfig::default_plateau_factor")]
    pub plateau_factor: f64,
    #[serde(default = "TrainConfig::default_plateau_patience")]
    pub plateau_patience: usize,
    #[serde(default = "TrainConfig::default_plateau_threshold")]
    pub plateau_threshold: f64,
    #[serde(default = "TrainConfig::default_lr_min")]
    pub lr_min: f64,
    #[serde(default = "TrainConfig::default_early_stop_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "TrainConfig::default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "TrainConfig::default_batch_size")]
    pub batch_size: usize,
    /// Shuffle and initialization seed; falls back to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TrainConfig {
    fn default_lr0() -> f64 {
        1e-3
    }
    fn default_plateau_factor() -> f64 {
        0.5
    }
    fn default_plateau_patience() -> usize {
        5
    }
    fn default_plateau_threshold() -> f64 {
        1e-4
    }
    fn default_lr_min() -> f64 {
        1e-7
    }
    fn default_early_stop_patience() -> usize {
        10
    }
    fn default_max_epochs() -> usize {
        500
    }
    fn default_batch_size() -> usize {
        8
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(StoneError::config(field, format!("{v} must be finite and positive")))
            }
        };
        finite_pos("train.lr0", self.lr0)?;
        finite_pos("train.lr_min", self.lr_min)?;
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(StoneError::config(
                "train.plateau_factor",
                format!("{} not in (0, 1)", self.plateau_factor),
            ));
        }
        if !(self.plateau_threshold >= 0.0 && self.plateau_threshold.is_finite()) {
            return Err(StoneError::config("train.plateau_threshold", "must be finite and non-negative"));
        }
        if self.lr_min >= self.lr0 {
            return Err(StoneError::config(
                "train.lr_min",
                format!("lr_min {} must be below lr0 {}", self.lr_min, self.lr0),
            ));
        }
        for (field, v) in [
            ("train.plateau_patience", self.plateau_patience),
            ("train.early_stop_patience", self.early_stop_patience),
            ("train.max_epochs", self.max_epochs),
            ("train.batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(StoneError::config(field, "must be at least 1"));
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: Self::default_lr0(),
            plateau_factor: Self::default_plateau_factor(),
            plateau_patience: Self::default_plateau_patience(),
            plateau_threshold: Self::default_plateau_threshold(),
            lr_min: Self::default_lr_min(),
            early_stop_patience: Self::default_early_stop_patience(),
            max_epochs: Self::default_max_epochs(),
            batch_size: Self::default_batch_size(),
            seed: None,
        }
    }
}

/// Mean of `(pred − target)²` over all elements.
pub fn mse_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    let (a, b) = (pred.dims(), target.dims());
    if a != b {
        return Err(StoneError::dims("mse_loss", &a, &b));
    }
    let diff = pred.sub(target)?;
    diff.mul(diff)?.mean()
}
