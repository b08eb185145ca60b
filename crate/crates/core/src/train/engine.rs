use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mse_loss, AdamState, EarlyStopper, EpochRecord, PlateauScheduler, TrainConfig, TrainLog};
use crate::autodiff::Tape;
use crate::data::{Prepared, WindowSet};
use crate::error::{Result, StoneError};
use crate::operator::StoneModel;
use crate::params::ParamStore;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    /// A non-finite loss or gradient; the best parameters so far are kept.
    Diverged { epoch: usize, detail: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: ParamStore,
    /// 1-based; 0 when no epoch completed.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: TrainLog,
    pub stop: StopReason,
}

/// Mean squared error over a whole window set in normalized units.
pub fn evaluate_loss(model: &StoneModel, set: &WindowSet, coords: &Tensor) -> Result<f64> {
    let mut sse = 0.0;
    let mut count = 0usize;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (hist, target) = set.batch(chunk)?;
        let pred = model.predict(&hist, coords)?;
        for (a, b) in pred.data().iter().zip(target.data()) {
            sse += (a - b) * (a - b);
        }
        count += target.numel();
    }
    let loss = sse / count as f64;
    if !loss.is_finite() {
        return Err(StoneError::Numerical {
            context: "validation".into(),
            detail: format!("loss {loss}"),
        });
    }
    Ok(loss)
}

pub fn train(model: &mut StoneModel, data: &Prepared, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_with(model, data, cfg, seed, |_| {})
}

/// Runs the regimen and leaves the best-validation parameters in `model`.
/// `on_epoch` sees every log record as it is produced.
pub fn train_with(
    model: &mut StoneModel,
    data: &Prepared,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(StoneError::config("data.split", "training needs non-empty train and validation splits"));
    }
    let coords = data.grid.normalized().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(model.params());
    let mut scheduler = PlateauScheduler::new(
        cfg.lr0,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.plateau_threshold,
        cfg.lr_min,
    );
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut log = TrainLog::default();
    let mut best_params = model.params().clone();
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = scheduler.lr();
        order.shuffle(&mut rng);
        let result = run_epoch(model, &mut adam, &data.train, &coords, &order, cfg.batch_size, lr)
            .and_then(|train_loss| Ok((train_loss, evaluate_loss(model, &data.val, &coords)?)));
        let (train_loss, val_loss) = match result {
            Ok(losses) => losses,
            Err(StoneError::Numerical { context, detail }) => {
                stop = StopReason::Diverged {
                    epoch,
                    detail: format!("{context}: {detail}"),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);

        scheduler.observe(val_loss);
        let should_stop = stopper.observe(val_loss);
        if stopper.best_epoch() == Some(epoch) {
            best_params = model.params().clone();
            best_epoch = epoch;
        }
        if should_stop {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    *model.params_mut() = best_params.clone();
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_val_loss: stopper.best(),
        log,
        stop,
    })
}

fn run_epoch(
    model: &mut StoneModel,
    adam: &mut AdamState,
    set: &WindowSet,
    coords: &Tensor,
    order: &[usize],
    batch_size: usize,
    lr: f64,
) -> Result<f64> {
    let mut weighted = 0.0;
    for batch in order.chunks(batch_size) {
        let (hist, target) = set.batch(batch)?;
        let grads = {
            let tape = Tape::new();
            let p = model.params().bind(&tape);
            let pred = model.forward(&p, tape.constant(hist), tape.constant(coords.clone()))?;
            let loss = mse_loss(pred, tape.constant(target))?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(StoneError::Numerical {
                    context: "training loss".into(),
                    detail: format!("{value}"),
                });
            }
            weighted += value * batch.len() as f64;
            p.grads(&tape.backward(loss)?)
        };
        adam.step(model.params_mut(), &grads, lr)?;
    }
    Ok(weighted / order.len() as f64)
}
