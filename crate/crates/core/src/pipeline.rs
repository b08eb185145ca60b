//! End-to-end steps shared by the command line, the bindings and the tests.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::{BranchKind, RunConfig};
use crate::data::{Dataset, Prepared, WindowSet};
use crate::error::{Result, StoneError};
use crate::metrics::{per_lead_profile, MetricReport};
use crate::operator::StoneModel;
use crate::tensor::Tensor;
use crate::train::{train_with, EpochRecord, TrainOutcome};

const EVAL_CHUNK: usize = 64;

/// Seed for the training shuffle, kept apart from the initialization stream.
fn shuffle_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_5EED_5EED_5EED
}

pub fn load_data(cfg: &RunConfig, base: &Path) -> Result<(Dataset, Prepared)> {
    let dataset = Dataset::from_config(&cfg.data, base)?;
    let prepared = dataset.prepare(cfg.data.k_hist, cfg.data.k_fut, cfg.data.split)?;
    Ok((dataset, prepared))
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub outcome: TrainOutcome,
}

/// Builds the model for `kind`, trains it and packages the best parameters.
pub fn train_branch(
    cfg: &RunConfig,
    kind: BranchKind,
    prepared: &Prepared,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    let n_sensors = prepared.norm.n_sensors();
    let model_cfg = cfg.model.resolve(kind, n_sensors, cfg.data.k_hist, cfg.data.k_fut);
    let seed = cfg.train.seed.unwrap_or(cfg.seed);
    let mut model = StoneModel::new(model_cfg, seed)?;
    let outcome = train_with(&mut model, prepared, &cfg.train, shuffle_seed(seed), on_epoch)?;
    Ok(TrainedModel {
        checkpoint: Checkpoint {
            label: kind.label().to_string(),
            model,
            norm: prepared.norm.clone(),
            run: Some(cfg.clone()),
        },
        outcome,
    })
}

/// De-normalized forecasts `[W×P×p×K]` for every window of `set`.
pub fn forecast_set(checkpoint: &Checkpoint, set: &WindowSet, coords: &Tensor) -> Result<Tensor> {
    let model = &checkpoint.model;
    let c = model.config();
    let hd = set.histories.dims();
    if hd[1] != c.k_hist() || hd[2] != c.branch.n_sensors {
        return Err(StoneError::config(
            "checkpoint",
            format!(
                "model expects windows of {}x{} but the dataset has {}x{}",
                c.k_hist(),
                c.branch.n_sensors,
                hd[1],
                hd[2]
            ),
        ));
    }
    let td = set.targets.dims();
    if td[1] != coords.dims()[0] || td[2] != c.trunk.p || td[3] != c.k_fut() {
        return Err(StoneError::config(
            "checkpoint",
            format!(
                "model emits p={} and K_fut={} but the dataset targets are {:?}",
                c.trunk.p,
                c.k_fut(),
                &td[1..]
            ),
        ));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.targets.numel());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (hist, _) = set.batch(chunk)?;
        let pred = model.predict(&hist, coords)?;
        out.extend_from_slice(checkpoint.norm.invert_target(&pred).data());
    }
    Tensor::from_vec(td, out)
}

/// Per-lead report on `set` in physical units.
pub fn evaluate_set(checkpoint: &Checkpoint, set: &WindowSet, coords: &Tensor) -> Result<MetricReport> {
    let forecasts = forecast_set(checkpoint, set, coords)?;
    per_lead_profile(&checkpoint.label, &forecasts, &set.targets_raw)
}
