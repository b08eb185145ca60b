//! Gradient checks for every layer family and every branch variant on a small toy.

use crate::autodiff::{Tape, Var};
use crate::branch::Branch;
use crate::config::{BranchConfig, BranchKind, ModelConfig, TrunkConfig};
use crate::error::Result;
use crate::gradcheck::{grad_check, jitter, GradCheck};
use crate::nn::{Activation, AttentionBlock, DenseLayer, GruCell, LstmCell};
use crate::operator::StoneModel;
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Tensor;
use crate::train::mse_loss;
use crate::trunk::Trunk;

pub const TOY_SENSORS: usize = 2;
pub const TOY_STEPS: usize = 4;
pub const TOY_POINTS: usize = 4;
const TOY_Q: usize = 4;
const TOY_K_FUT: usize = 3;
const TOY_BATCH: usize = 2;
const JITTER: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub layer: &'static str,
    pub branch: BranchKind,
    pub check: GradCheck,
}

/// Deterministic pseudo-random values in `(-1, 1)`.
fn pattern(dims: &[usize], phase: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|i| (i as f64 * 0.731 + phase).sin()).collect()).expect("non-empty dims")
}

fn coords() -> Tensor {
    pattern(&[TOY_POINTS, 2], 0.4).map(|v| 0.5 + 0.45 * v)
}

/// Weighted sum so that no gradient cancels by symmetry.
fn weighted<'t>(tape: &'t Tape, y: Var<'t>) -> Result<Var<'t>> {
    let w = pattern(&y.dims(), 2.1);
    y.mul(tape.constant(w))?.sum()
}

fn finish(pb: ParamBuilder, seed: u64) -> ParamStore {
    let mut store = pb.finish();
    jitter(&mut store, seed, JITTER);
    store
}

pub fn toy_model_config(kind: BranchKind) -> ModelConfig {
    ModelConfig {
        branch: BranchConfig {
            kind,
            n_sensors: TOY_SENSORS,
            k_hist: TOY_STEPS,
            q: TOY_Q,
            depth: 2,
            heads: 2,
        },
        trunk: TrunkConfig {
            q: TOY_Q,
            p: 1,
            k_fut: TOY_K_FUT,
            hidden: 5,
            layers: 2,
        },
    }
}

fn check_dense(seed: u64, eps: f64) -> Result<GradCheck> {
    let mut pb = ParamBuilder::new(seed);
    let layer = DenseLayer::new(&mut pb, "dense", TOY_STEPS * TOY_SENSORS, TOY_Q, Activation::Tanh)?;
    let store = finish(pb, seed);
    let x = pattern(&[TOY_BATCH, TOY_STEPS * TOY_SENSORS], 0.1);
    grad_check(|t, p| weighted(t, layer.forward(p, t.constant(x.clone()))?), &store, eps)
}

fn check_gru(seed: u64, eps: f64) -> Result<GradCheck> {
    let mut pb = ParamBuilder::new(seed);
    let cell = GruCell::new(&mut pb, "gru", TOY_SENSORS, TOY_Q)?;
    let store = finish(pb, seed);
    let x = pattern(&[TOY_BATCH, TOY_SENSORS], 0.2);
    let h = pattern(&[TOY_BATCH, TOY_Q], 0.3);
    grad_check(
        |t, p| weighted(t, cell.step(p, t.constant(x.clone()), t.constant(h.clone()))?),
        &store,
        eps,
    )
}

fn check_lstm(seed: u64, eps: f64) -> Result<GradCheck> {
    let mut pb = ParamBuilder::new(seed);
    let cell = LstmCell::new(&mut pb, "lstm", TOY_SENSORS, TOY_Q)?;
    let store = finish(pb, seed);
    let x = pattern(&[TOY_BATCH, TOY_SENSORS], 0.2);
    let h = pattern(&[TOY_BATCH, TOY_Q], 0.3);
    let c = pattern(&[TOY_BATCH, TOY_Q], 0.5);
    grad_check(
        |t, p| {
            let (h2, c2) = cell.step(p, t.constant(x.clone()), t.constant(h.clone()), t.constant(c.clone()))?;
            weighted(t, t.concat(&[h2, c2], 1)?)
        },
        &store,
        eps,
    )
}

fn check_attention(seed: u64, eps: f64) -> Result<GradCheck> {
    let mut pb = ParamBuilder::new(seed);
    let block = AttentionBlock::new(&mut pb, "attn", TOY_Q, 2)?;
    let store = finish(pb, seed);
    let x = pattern(&[TOY_BATCH, TOY_STEPS, TOY_Q], 0.6);
    grad_check(|t, p| weighted(t, block.forward(p, t.constant(x.clone()))?), &store, eps)
}

fn check_branch(kind: BranchKind, seed: u64, eps: f64) -> Result<GradCheck> {
    let mut pb = ParamBuilder::new(seed);
    let branch = Branch::new(&mut pb, &toy_model_config(kind).branch)?;
    let store = finish(pb, seed);
    let u = pattern(&[TOY_BATCH, TOY_STEPS, TOY_SENSORS], 0.7);
    grad_check(|t, p| weighted(t, branch.encode(p, t.constant(u.clone()))?), &store, eps)
}

fn check_trunk(seed: u64, eps: f64) -> Result<GradCheck> {
    let mut pb = ParamBuilder::new(seed);
    let trunk = Trunk::new(&mut pb, &toy_model_config(BranchKind::Fcn).trunk)?;
    let store = finish(pb, seed);
    let c = coords();
    grad_check(|t, p| weighted(t, trunk.decode_basis(p, t.constant(c.clone()))?), &store, eps)
}

fn check_end_to_end(kind: BranchKind, seed: u64, eps: f64) -> Result<GradCheck> {
    let mut model = StoneModel::new(toy_model_config(kind), seed)?;
    jitter(model.params_mut(), seed, JITTER);
    let u = pattern(&[TOY_BATCH, TOY_STEPS, TOY_SENSORS], 0.8);
    let c = coords();
    let target = pattern(&[TOY_BATCH, TOY_POINTS, 1, TOY_K_FUT], 1.9);
    grad_check(
        |t, p| {
            let y = model.forward(p, t.constant(u.clone()), t.constant(c.clone()))?;
            mse_loss(y, t.constant(target.clone()))
        },
        model.params(),
        eps,
    )
}

/// One row per (layer family, branch kind), ending with the full model.
pub fn run_suite(seed: u64, eps: f64) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    for kind in BranchKind::ALL {
        let mut push = |layer: &'static str, check: GradCheck| rows.push(SuiteRow { layer, branch: kind, check });
        match kind {
            BranchKind::Fcn => push("dense", check_dense(seed, eps)?),
            BranchKind::Gru => push("gru_cell", check_gru(seed, eps)?),
            BranchKind::Lstm => push("lstm_cell", check_lstm(seed, eps)?),
            BranchKind::Transformer => {
                push("dense", check_dense(seed, eps)?);
                push("attention", check_attention(seed, eps)?);
            }
        }
        push("branch", check_branch(kind, seed, eps)?);
        push("trunk", check_trunk(seed, eps)?);
        push("end_to_end", check_end_to_end(kind, seed, eps)?);
    }
    Ok(rows)
}
