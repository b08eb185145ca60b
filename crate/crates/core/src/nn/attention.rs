use crate::autodiff::Var;
use crate::error::{Result, StoneError};
use crate::nn::{Activation, DenseLayer};
use crate::params::{Bound, ParamBuilder, ParamId};

const LN_EPS: f64 = 1e-5;

/// Pre-norm multi-head self-attention block followed by a feed-forward pair.
///
/// `wq`, `wk`, `wv` are `[q×q]`; rows `h·d..(h+1)·d` (with `d = q/heads`)
/// form the `[d×q]` projection of head `h`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub ff1: DenseLayer,
    pub ff2: DenseLayer,
    pub width: usize,
    pub heads: usize,
}

impl AttentionBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(StoneError::config(
                "model.heads",
                format!("{heads} heads do not divide width {width}"),
            ));
        }
        let n = |s: &str| format!("{name}.{s}");
        Ok(AttentionBlock {
            wq: pb.glorot(&n("wq"), width, width)?,
            wk: pb.glorot(&n("wk"), width, width)?,
            wv: pb.glorot(&n("wv"), width, width)?,
            wo: pb.glorot(&n("wo"), width, width)?,
            ln1_gamma: pb.filled(&n("ln1.gamma"), &[width], 1.0)?,
            ln1_beta: pb.zeros(&n("ln1.beta"), &[width])?,
            ln2_gamma: pb.filled(&n("ln2.gamma"), &[width], 1.0)?,
            ln2_beta: pb.zeros(&n("ln2.beta"), &[width])?,
            ff1: DenseLayer::new(pb, &n("ff1"), width, width, Activation::Relu)?,
            ff2: DenseLayer::new(pb, &n("ff2"), width, width, Activation::Identity)?,
            width,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, seq: Var<'t>) -> Result<Var<'t>> {
        self.forward_with_weights(p, seq).map(|(out, _)| out)
    }

    /// Runs the block on `[len×q]` or `[batch×len×q]`; also returns the
    /// attention weights as `[batch·heads × len × len]`.
    pub fn forward_with_weights<'t>(&self, p: &Bound<'t>, seq: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let dims = seq.dims();
        let (batch, len, unbatched) = match dims.as_slice() {
            [l, w] if *w == self.width => (1, *l, true),
            [b, l, w] if *w == self.width => (*b, *l, false),
            _ => return Err(StoneError::dims("attention_forward", &dims, &[self.width])),
        };
        let (q, h, d) = (self.width, self.heads, self.head_dim());
        let x = seq.reshape(&[batch, len, q])?;

        let normed = x
            .layer_norm(p.var(self.ln1_gamma), p.var(self.ln1_beta), LN_EPS)?
            .reshape(&[batch * len, q])?;
        let split_heads = |w: ParamId| -> Result<Var<'t>> {
            normed
                .matmul_bt(p.var(w))?
                .reshape(&[batch, len, h, d])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[batch * h, len, d])
        };
        let (qh, kh, vh) = (split_heads(self.wq)?, split_heads(self.wk)?, split_heads(self.wv)?);
        let weights = qh.bmm_bt(kh)?.scale(1.0 / (d as f64).sqrt())?.softmax(2)?;
        let context = weights
            .bmm(vh)?
            .reshape(&[batch, h, len, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * len, q])?;
        let attended = context.matmul_bt(p.var(self.wo))?.reshape(&[batch, len, q])?;
        let x1 = x.add(attended)?;

        let normed2 = x1
            .layer_norm(p.var(self.ln2_gamma), p.var(self.ln2_beta), LN_EPS)?
            .reshape(&[batch * len, q])?;
        let ff = self.ff2.forward(p, self.ff1.forward(p, normed2)?)?;
        let out = x1.add(ff.reshape(&[batch, len, q])?)?;
        let out = if unbatched { out.reshape(&[len, q])? } else { out };
        Ok((out, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck::grad_check;
    use crate::params::ParamStore;
    use crate::tensor::Tensor;

    fn block(width: usize, heads: usize, seed: u64) -> (AttentionBlock, ParamStore) {
        let mut pb = ParamBuilder::new(seed);
        let b = AttentionBlock::new(&mut pb, "attn", width, heads).unwrap();
        (b, pb.finish())
    }

    fn seq(dims: &[usize], phase: f64) -> Tensor {
        let n = dims.iter().product::<usize>();
        Tensor::from_vec(dims, (0..n).map(|i| (i as f64 * 1.3 + phase).sin() * 1.5).collect()).unwrap()
    }

    #[test]
    fn heads_must_divide_width() {
        let mut pb = ParamBuilder::new(0);
        assert!(matches!(
            AttentionBlock::new(&mut pb, "a", 6, 4),
            Err(StoneError::Config { .. })
        ));
    }

    #[test]
    fn single_token_weight_is_one() {
        let (b, s) = block(8, 2, 1);
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        let (out, w) = b.forward_with_weights(&p, tape.constant(seq(&[1, 8], 0.0))).unwrap();
        assert_eq!(out.dims(), vec![1, 8]);
        assert!(w.value().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_token_output_is_value_path_plus_feed_forward() {
        let (b, s) = block(4, 2, 3);
        let x = seq(&[1, 4], 0.4);
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        let out = b.forward(&p, tape.constant(x.clone())).unwrap().value();

        // oracle: with one token softmax is 1, so attention = Wo·Wv·LN(x)
        let ln = |v: &[f64], g: &Tensor, bb: &Tensor| -> Vec<f64> {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64;
            v.iter()
                .enumerate()
                .map(|(i, a)| g.data()[i] * (a - m) / (var + LN_EPS).sqrt() + bb.data()[i])
                .collect()
        };
        let matvec = |w: &Tensor, v: &[f64]| -> Vec<f64> {
            (0..4).map(|r| (0..4).map(|c| w.at(&[r, c]) * v[c]).sum()).collect()
        };
        let h = ln(x.data(), s.get(b.ln1_gamma), s.get(b.ln1_beta));
        let attn = matvec(s.get(b.wo), &matvec(s.get(b.wv), &h));
        let x1: Vec<f64> = x.data().iter().zip(&attn).map(|(a, c)| a + c).collect();
        let h2 = ln(&x1, s.get(b.ln2_gamma), s.get(b.ln2_beta));
        let f1: Vec<f64> = matvec(s.get(b.ff1.w), &h2).iter().map(|v| v.max(0.0)).collect();
        let f2 = matvec(s.get(b.ff2.w), &f1);
        for i in 0..4 {
            assert!((out.data()[i] - (x1[i] + f2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_tokens_attend_uniformly() {
        let (b, s) = block(8, 4, 2);
        let token = seq(&[1, 8], 0.9);
        let rows: Vec<&Tensor> = vec![&token; 5];
        let x = Tensor::stack(&rows).unwrap().reshape(&[5, 8]).unwrap();
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        let (_, w) = b.forward_with_weights(&p, tape.constant(x)).unwrap();
        for v in w.value().data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_rows_sum_to_one() {
        let (b, s) = block(8, 2, 7);
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        let (_, w) = b.forward_with_weights(&p, tape.constant(seq(&[3, 6, 8], 0.2))).unwrap();
        let w = w.value();
        assert_eq!(w.dims(), &[6, 6, 6]);
        for row in w.data().chunks(6) {
            assert!(row.iter().all(|v| *v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_equals_per_sample() {
        let (b, s) = block(8, 2, 5);
        let x = seq(&[2, 3, 8], 0.1);
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        let both = b.forward(&p, tape.constant(x.clone())).unwrap().value();
        for i in 0..2 {
            let one = b
                .forward(&p, tape.constant(x.rows(i, 1).unwrap().reshape(&[3, 8]).unwrap()))
                .unwrap()
                .value();
            assert_eq!(one.data(), &both.data()[i * 24..(i + 1) * 24]);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let (b, s) = block(4, 2, 11);
        let x = seq(&[2, 3, 4], 0.3);
        let c = seq(&[2, 3, 4], 2.0);
        let r = grad_check(
            |tape, p| b.forward(p, tape.constant(x.clone()))?.mul(tape.constant(c.clone()))?.sum(),
            &s,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}
