//! Branch and trunk joined by the tensor contraction
//! `y_j(r, k) = Σ_i b_i · T_ijk(r) + β_j`.

use crate::autodiff::{Tape, Var};
use crate::branch::Branch;
use crate::config::ModelConfig;
use crate::data::{NormStats, QueryGrid};
use crate::error::{Result, StoneError};
use crate::params::{Bound, ParamBuilder, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::trunk::Trunk;

#[derive(Debug, Clone)]
pub struct StoneModel {
    config: ModelConfig,
    params: ParamStore,
    branch: Branch,
    trunk: Trunk,
    beta: ParamId,
}

/// A full forecast in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// `[batch×P×p×K_fut]`.
    pub values: Tensor,
    pub coords: QueryGrid,
    /// `1..=K_fut`, in days.
    pub lead_times: Vec<usize>,
}

/// `b: [B×q]`, `basis: [P×q×p×K]`, `beta: [p]` to `[B×P×p×K]`, as one matrix product.
pub fn contract<'t>(b: Var<'t>, basis: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
    let (bd, td, betad) = (b.dims(), basis.dims(), beta.dims());
    if bd.len() != 2 || td.len() != 4 || bd[1] != td[1] {
        return Err(StoneError::dims("contract", &bd, &td));
    }
    if betad != [td[2]] {
        return Err(StoneError::dims("contract", &betad, &[td[2]]));
    }
    let (batch, points, q, p, k) = (bd[0], td[0], td[1], td[2], td[3]);
    let flat = basis.permute(&[1, 0, 2, 3])?.reshape(&[q, points * p * k])?;
    b.matmul(flat)?
        .reshape(&[batch, points, p, k])?
        .add(beta.reshape(&[p, 1])?)
}

impl StoneModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed);
        let branch = Branch::new(&mut pb, &config.branch)?;
        let trunk = Trunk::new(&mut pb, &config.trunk)?;
        let beta = pb.zeros("beta", &[config.trunk.p])?;
        Ok(StoneModel {
            config,
            params: pb.finish(),
            branch,
            trunk,
            beta,
        })
    }

    /// Rebuilds the architecture and installs `params`, which must match it by name and shape.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(StoneError::Contract(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((want, w), (got, g)) in model.params.iter().zip(params.iter()) {
            if want != got || w.dims() != g.dims() {
                return Err(StoneError::Contract(format!(
                    "parameter `{got}` {:?} does not match `{want}` {:?}",
                    g.dims(),
                    w.dims()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn branch(&self) -> &Branch {
        &self.branch
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// `u_hist: [B×K_hist×N]`, `coords: [P×2]` normalized, to `[B×P×p×K_fut]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, u_hist: Var<'t>, coords: Var<'t>) -> Result<Var<'t>> {
        let b = self.branch.encode(p, u_hist)?;
        let basis = self.trunk.decode_basis(p, coords)?;
        contract(b, basis, p.var(self.beta))
    }

    /// Single-snapshot inner product `Σ_i b_i t_i(r) + β`; needs `K_hist = K_fut = p = 1`.
    pub fn forward_vanilla<'t>(&self, p: &Bound<'t>, u_snapshot: Var<'t>, coords: Var<'t>) -> Result<Var<'t>> {
        let c = &self.config;
        if c.k_hist() != 1 || c.k_fut() != 1 || c.trunk.p != 1 {
            return Err(StoneError::config(
                "model",
                "the inner-product baseline needs k_hist = k_fut = p = 1",
            ));
        }
        let dims = u_snapshot.dims();
        if dims.len() != 2 {
            return Err(StoneError::dims("forward_vanilla", &dims, &[c.branch.n_sensors]));
        }
        let b = self.branch.encode(p, u_snapshot.reshape(&[dims[0], 1, dims[1]])?)?;
        let points = coords.dims()[0];
        let t = self.trunk.decode_basis(p, coords)?.reshape(&[points, c.trunk.q])?;
        b.matmul_bt(t)?.add(p.var(self.beta))
    }

    /// Inference on plain tensors; no gradients are recorded.
    pub fn predict(&self, u_hist: &Tensor, coords: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let out = self.forward(&p, tape.constant(u_hist.clone()), tape.constant(coords.clone()))?;
        let value = out.value();
        Ok((*value).clone())
    }

    /// Output at a single lead (0-based) computed from only the trunk rows for
    /// that lead: `[B×P×p]`.
    pub fn predict_lead(&self, u_hist: &Tensor, coords: &Tensor, lead: usize) -> Result<Tensor> {
        let tc = &self.config.trunk;
        if lead >= tc.k_fut {
            return Err(StoneError::Range(format!("lead {lead} outside 0..{}", tc.k_fut)));
        }
        let out_layer = self.trunk.output_layer();
        let w = self.params.get(out_layer.w);
        let bias = self.params.get(out_layer.b);
        let width = w.dims()[1];
        let rows: Vec<usize> = (0..tc.q)
            .flat_map(|i| (0..tc.p).map(move |j| tc.flat_index(i, j, lead)))
            .collect();
        let mut w_sub = Vec::with_capacity(rows.len() * width);
        for &r in &rows {
            w_sub.extend_from_slice(&w.data()[r * width..(r + 1) * width]);
        }
        let b_sub: Vec<f64> = rows.iter().map(|&r| bias.data()[r]).collect();

        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let b = self.branch.encode(&p, tape.constant(u_hist.clone()))?;
        let coords = tape.constant(coords.clone());
        let points = coords.dims()[0];
        let hidden = self.trunk.features(&p, coords)?;
        let basis = hidden
            .matmul_bt(tape.constant(Tensor::from_vec(&[rows.len(), width], w_sub)?))?
            .add(tape.constant(Tensor::from_vec(&[rows.len()], b_sub)?))?
            .reshape(&[points, tc.q, tc.p, 1])?;
        let out = contract(b, basis, p.var(self.beta))?;
        let batch = out.dims()[0];
        let value = out.value().reshape(&[batch, points, tc.p])?;
        Ok(value)
    }

    /// One branch pass, one trunk pass, one contraction for a raw (physical-unit)
    /// `[K_hist×N]` or `[B×K_hist×N]` window; output is de-normalized.
    pub fn forecast_single_pass(&self, window: &Tensor, grid: &QueryGrid, norm: &NormStats) -> Result<Forecast> {
        let (kh, n) = (self.config.k_hist(), self.config.branch.n_sensors);
        let batched = match window.dims() {
            [k, s] if *k == kh && *s == n => window.reshape(&[1, kh, n])?,
            [_, k, s] if *k == kh && *s == n => window.clone(),
            d => {
                return Err(StoneError::Contract(format!(
                    "forecast window has shape {d:?}, expected {kh} rows of {n} sensors"
                )))
            }
        };
        if norm.n_sensors() != n {
            return Err(StoneError::Contract(format!(
                "normalization covers {} sensors, model expects {n}",
                norm.n_sensors()
            )));
        }
        let normed = self.predict(&norm.apply_history(&batched)?, grid.normalized())?;
        let values = norm.invert_target(&normed);
        if !values.is_finite() {
            return Err(StoneError::Numerical {
                context: "forecast".into(),
                detail: "non-finite output".into(),
            });
        }
        Ok(Forecast {
            values,
            coords: grid.clone(),
            lead_times: (1..=self.config.k_fut()).collect(),
        })
    }
}
