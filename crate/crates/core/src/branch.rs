//! Branch encoders: sensor history `[batch×K_hist×N]` to coefficients `[batch×q]`.
//!
//! All four families end in the same trainable `q→q` linear head, so they
//! are interchangeable behind [`Branch::encode`]. Recurrent encoders keep
//! the final hidden state of the top layer; the transformer mean-pools
//! over time.

use crate::autodiff::Var;
use crate::config::{BranchConfig, BranchKind};
use crate::error::{Result, StoneError};
use crate::nn::{positional_encoding, Activation, AttentionBlock, DenseLayer, GruCell, LstmCell};
use crate::params::{Bound, ParamBuilder};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Encoder {
    Fcn(Vec<DenseLayer>),
    Gru(Vec<GruCell>),
    Lstm(Vec<LstmCell>),
    Transformer {
        embed: DenseLayer,
        blocks: Vec<AttentionBlock>,
        positions: Tensor,
    },
}

#[derive(Debug, Clone)]
pub struct Branch {
    config: BranchConfig,
    encoder: Encoder,
    head: DenseLayer,
}

impl Branch {
    pub fn new(pb: &mut ParamBuilder, config: &BranchConfig) -> Result<Self> {
        config.validate()?;
        let (q, n, depth) = (config.q, config.n_sensors, config.depth);
        let encoder = match config.kind {
            BranchKind::Fcn => {
                let mut layers = Vec::with_capacity(depth);
                let mut width = config.k_hist * n;
                for l in 0..depth {
                    layers.push(DenseLayer::new(pb, &format!("branch.fc{l}"), width, q, Activation::Relu)?);
                    width = q;
                }
                Encoder::Fcn(layers)
            }
            BranchKind::Gru => Encoder::Gru(
                (0..depth)
                    .map(|l| GruCell::new(pb, &format!("branch.gru{l}"), if l == 0 { n } else { q }, q))
                    .collect::<Result<_>>()?,
            ),
            BranchKind::Lstm => Encoder::Lstm(
                (0..depth)
                    .map(|l| LstmCell::new(pb, &format!("branch.lstm{l}"), if l == 0 { n } else { q }, q))
                    .collect::<Result<_>>()?,
            ),
            BranchKind::Transformer => Encoder::Transformer {
                embed: DenseLayer::new(pb, "branch.embed", n, q, Activation::Identity)?,
                blocks: (0..depth)
                    .map(|l| AttentionBlock::new(pb, &format!("branch.attn{l}"), q, config.heads))
                    .collect::<Result<_>>()?,
                positions: positional_encoding(config.k_hist, q)?,
            },
        };
        let head = DenseLayer::new(pb, "branch.head", q, q, Activation::Identity)?;
        Ok(Branch {
            config: config.clone(),
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.config
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    /// `u_hist: [batch×K_hist×N] -> b: [batch×q]`.
    pub fn encode<'t>(&self, p: &Bound<'t>, u_hist: Var<'t>) -> Result<Var<'t>> {
        let dims = u_hist.dims();
        let c = &self.config;
        if dims.len() != 3 || dims[1] != c.k_hist || dims[2] != c.n_sensors {
            return Err(StoneError::dims("branch_encode", &dims, &[c.k_hist, c.n_sensors]));
        }
        let features = match &self.encoder {
            Encoder::Fcn(layers) => self.encode_fcn(p, layers, u_hist, dims[0])?,
            Encoder::Gru(cells) => self.encode_gru(p, cells, u_hist, dims[0])?,
            Encoder::Lstm(cells) => self.encode_lstm(p, cells, u_hist, dims[0])?,
            Encoder::Transformer {
                embed,
                blocks,
                positions,
            } => self.encode_transformer(p, embed, blocks, positions, u_hist, dims[0])?,
        };
        self.head.forward(p, features)
    }

    fn encode_fcn<'t>(&self, p: &Bound<'t>, layers: &[DenseLayer], u: Var<'t>, batch: usize) -> Result<Var<'t>> {
        let mut x = u.reshape(&[batch, self.config.k_hist * self.config.n_sensors])?;
        for layer in layers {
            x = layer.forward(p, x)?;
        }
        Ok(x)
    }

    fn encode_gru<'t>(&self, p: &Bound<'t>, cells: &[GruCell], u: Var<'t>, batch: usize) -> Result<Var<'t>> {
        let tape = u.tape();
        let zero = tape.constant(Tensor::zeros(&[batch, self.config.q]));
        let mut hidden = vec![zero; cells.len()];
        for t in 0..self.config.k_hist {
            let mut x = u.select(1, t)?;
            for (cell, h) in cells.iter().zip(hidden.iter_mut()) {
                *h = cell.step(p, x, *h)?;
                x = *h;
            }
        }
        Ok(*hidden.last().expect("depth >= 1"))
    }

    fn encode_lstm<'t>(&self, p: &Bound<'t>, cells: &[LstmCell], u: Var<'t>, batch: usize) -> Result<Var<'t>> {
        let tape = u.tape();
        let zero = tape.constant(Tensor::zeros(&[batch, self.config.q]));
        let mut state = vec![(zero, zero); cells.len()];
        for t in 0..self.config.k_hist {
            let mut x = u.select(1, t)?;
            for (cell, s) in cells.iter().zip(state.iter_mut()) {
                *s = cell.step(p, x, s.0, s.1)?;
                x = s.0;
            }
        }
        Ok(state.last().expect("depth >= 1").0)
    }

    fn encode_transformer<'t>(
        &self,
        p: &Bound<'t>,
        embed: &DenseLayer,
        blocks: &[AttentionBlock],
        positions: &Tensor,
        u: Var<'t>,
        batch: usize,
    ) -> Result<Var<'t>> {
        let (k, n, q) = (self.config.k_hist, self.config.n_sensors, self.config.q);
        let tape = u.tape();
        let tokens = embed.forward(p, u.reshape(&[batch * k, n])?)?.reshape(&[batch, k, q])?;
        let mut x = tokens.add(tape.constant(positions.clone()))?;
        for block in blocks {
            x = block.forward(p, x)?;
        }
        x.mean_axis(1)
    }

    /// Pooled representation before the output head (for diagnostics and tests).
    pub fn features<'t>(&self, p: &Bound<'t>, u_hist: Var<'t>) -> Result<Var<'t>> {
        let batch = u_hist.dims()[0];
        match &self.encoder {
            Encoder::Fcn(layers) => self.encode_fcn(p, layers, u_hist, batch),
            Encoder::Gru(cells) => self.encode_gru(p, cells, u_hist, batch),
            Encoder::Lstm(cells) => self.encode_lstm(p, cells, u_hist, batch),
            Encoder::Transformer {
                embed,
                blocks,
                positions,
            } => self.encode_transformer(p, embed, blocks, positions, u_hist, batch),
        }
    }
}
