//! Layers assembled into the branch and trunk networks.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`](crate::params::ParamStore)
//! rather than tensors, so one layer description serves both training
//! (gradient leaves) and inference (frozen leaves).

mod attention;
mod positional;
mod recurrent;

pub use attention::AttentionBlock;
pub use positional::positional_encoding;
pub use recurrent::{GruCell, LstmCell};

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Result, StoneError};
use crate::params::{Bound, ParamBuilder, ParamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `activation(x·Wᵀ + b)` with `W: [out×in]`, `b: [out]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(DenseLayer {
            w: pb.glorot(&format!("{name}.w"), out_dim, in_dim)?,
            b: pb.zeros(&format!("{name}.b"), &[out_dim])?,
            activation,
            in_dim,
            out_dim,
        })
    }

    /// `x: [batch×in] -> [batch×out]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let dims = x.dims();
        if dims.len() != 2 || dims[1] != self.in_dim {
            return Err(StoneError::dims("dense_forward", &dims, &[self.out_dim, self.in_dim]));
        }
        let z = x.matmul_bt(p.var(self.w))?.add(p.var(self.b))?;
        self.activation.apply(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck::grad_check;
    use crate::tensor::Tensor;

    fn layer(in_dim: usize, out_dim: usize, act: Activation) -> (DenseLayer, crate::params::ParamStore) {
        let mut pb = ParamBuilder::new(1);
        let l = DenseLayer::new(&mut pb, "d", in_dim, out_dim, act).unwrap();
        (l, pb.finish())
    }

    #[test]
    fn identity_weights_pass_through() {
        let (l, mut s) = layer(3, 3, Activation::Identity);
        s.set(l.w, Tensor::eye(3)).unwrap();
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        let x = Tensor::from_vec(&[2, 3], vec![1., -2., 3., 0.5, 0., -7.]).unwrap();
        let y = l.forward(&p, tape.constant(x.clone())).unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let (l, mut s) = layer(2, 3, Activation::Identity);
        s.set(l.w, Tensor::zeros(&[3, 2])).unwrap();
        s.set(l.b, Tensor::from_vec(&[3], vec![0.5, -1., 2.]).unwrap()).unwrap();
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        let y = l
            .forward(&p, tape.constant(Tensor::full(&[4, 2], 9.0)))
            .unwrap()
            .value();
        for row in y.data().chunks(3) {
            assert_eq!(row, &[0.5, -1., 2.]);
        }
    }

    #[test]
    fn relu_clamps_negative_sum() {
        let (l, mut s) = layer(2, 1, Activation::Relu);
        s.set(l.w, Tensor::from_vec(&[1, 2], vec![1., 1.]).unwrap()).unwrap();
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        let x = tape.constant(Tensor::from_vec(&[1, 2], vec![-2., 1.]).unwrap());
        assert_eq!(l.forward(&p, x).unwrap().value().data(), &[0.0]);
    }

    #[test]
    fn wrong_input_width_rejected() {
        let (l, s) = layer(3, 2, Activation::Tanh);
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        assert!(l.forward(&p, tape.constant(Tensor::zeros(&[1, 2]))).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        for act in [Activation::Identity, Activation::Relu, Activation::Tanh] {
            let (l, s) = layer(3, 4, act);
            let x = Tensor::from_vec(&[2, 3], vec![0.3, -0.7, 1.1, -0.2, 0.9, 0.4]).unwrap();
            let r = grad_check(
                |tape, p| l.forward(p, tape.constant(x.clone()))?.mul(tape.constant(Tensor::full(&[2, 4], 0.3)))?.sum(),
                &s,
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_err < 1e-4, "{act:?}: {r:?}");
        }
    }
}
