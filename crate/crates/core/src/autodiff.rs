//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and the rule
//! needed to push gradients back to its inputs. Nodes are only ever
//! appended, so the tape order is a topological order and `backward`
//! is a single reverse sweep.
//!
//! ```
//! use stone_core::autodiff::Tape;
//! use stone_core::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let w = tape.param(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = w.mul(w).unwrap().sum().unwrap().scale(0.5).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[1.0, -2.0, 0.5]);
//! ```
#![allow(clippy::should_implement_trait)]

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, StoneError};
use crate::tensor::{self, Broadcast, Shape, Tensor};

/// Backward rule of a user-defined operation: `(inputs, output, upstream) -> input grads`.
pub type CustomBackward = Box<dyn Fn(&[Rc<Tensor>], &Tensor, &Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    /// Batched product over a leading axis; 2-D products use a batch of one.
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_transposed: bool,
    },
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Softmax(usize, usize),
    Sum(usize),
    Mean(usize),
    MeanAxis(usize, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Narrow {
        a: usize,
        axis: usize,
        start: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Custom {
        inputs: Vec<usize>,
        backward: CustomBackward,
    },
}

struct Node {
    name: &'static str,
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    nudge: Cell<Option<Nudge>>,
}

/// Offset added to one element of one recorded value, used to probe adjoints.
#[derive(Debug, Clone, Copy)]
struct Nudge {
    node: usize,
    index: usize,
    delta: f64,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that adds `delta` to element `index` of the `node`-th recorded
    /// value as it is created. Rebuilding the same graph on it gives a
    /// finite-difference probe of that node's adjoint.
    pub(crate) fn nudged(node: usize, index: usize, delta: f64) -> Self {
        let tape = Self::default();
        tape.nudge.set(Some(Nudge { node, index, delta }));
        tape
    }

    fn apply_nudge(&self, id: usize, value: &mut Tensor) {
        if let Some(n) = self.nudge.get() {
            if n.node == id && n.index < value.numel() {
                value.data_mut()[n.index] += n.delta;
            }
        }
    }

    /// Operation name recorded for node `id`.
    pub(crate) fn op_name(&self, id: usize) -> &'static str {
        self.nodes.borrow()[id].name
    }

    pub(crate) fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub(crate) fn numel(&self, id: usize) -> usize {
        self.nodes.borrow()[id].value.numel()
    }

    /// Nodes read by the operation that produced node `id`.
    pub(crate) fn inputs(&self, id: usize) -> Vec<usize> {
        op_inputs(&self.nodes.borrow()[id].op)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// A leaf that receives a gradient on `backward`.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    fn leaf(&self, mut value: Tensor, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        self.apply_nudge(nodes.len(), &mut value);
        nodes.push(Node {
            name: "leaf",
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, mut value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(StoneError::Numerical {
                context: name.to_string(),
                detail: "non-finite value in forward pass".into(),
            });
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = inputs.iter().any(|&i| nodes[i].needs_grad);
        self.apply_nudge(nodes.len(), &mut value);
        nodes.push(Node {
            name,
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| StoneError::Contract("concat of zero tensors".into()))?
            .value();
        if axis >= first.shape().rank() {
            return Err(StoneError::Contract(format!(
                "concat axis {axis} out of range for {:?}",
                first.shape()
            )));
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut dims = first.dims().to_vec();
        dims[axis] = 0;
        for v in &values {
            let d = v.dims();
            let compatible = d.len() == dims.len()
                && d.iter()
                    .zip(first.dims())
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(StoneError::dims("concat", first.dims(), d));
            }
            dims[axis] += d[axis];
        }
        let (outer, _, inner) = first.shape().around(axis);
        let mut data = Vec::with_capacity(dims.iter().product());
        for o in 0..outer {
            for v in &values {
                let chunk = v.dims()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = Tensor::from_vec(&dims, data)?;
        self.push("concat", out, Op::Concat(ids.clone(), axis), &ids)
    }

    /// Records an operation whose forward value and backward rule are
    /// supplied by the caller. Used for test fixtures and one-off kernels.
    pub fn custom<'t>(
        &'t self,
        name: &'static str,
        inputs: &[Var<'t>],
        forward: impl FnOnce(&[Rc<Tensor>]) -> Tensor,
        backward: CustomBackward,
    ) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = inputs.iter().map(|v| v.value()).collect();
        let out = forward(&values);
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        self.push(
            name,
            out,
            Op::Custom {
                inputs: ids.clone(),
                backward,
            },
            &ids,
        )
    }

    /// Propagates d(loss)/d(node) to every node that depends on a param leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(StoneError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.value.is_finite() {
            return Err(StoneError::Numerical {
                context: "backward".into(),
                detail: "loss is not finite".into(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.dims(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (parent, pg) in local_grads(&nodes, node, &g) {
                if !nodes[parent].needs_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Adjoint of the node with index `id`, if it received one.
    pub(crate) fn node(&self, id: usize) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.id].dims()))
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul { a, b, .. } | Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Relu(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Softmax(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::MeanAxis(a, _)
        | Op::Reshape(a)
        | Op::Permute(a, _)
        | Op::Narrow { a, .. } => vec![*a],
        Op::Concat(ids, _) => ids.clone(),
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Custom { inputs, .. } => inputs.clone(),
    }
}

fn ew(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_shape(a.shape().clone(), data)
}

fn local_grads(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |i: usize| &*nodes[i].value;
    let y = &*node.value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            b_transposed,
        } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (*m, *k, *n);
            let mut ga = vec![0.0; av.numel()];
            let mut gb = vec![0.0; bv.numel()];
            for s in 0..*batch {
                let gs = &g.data()[s * m * n..(s + 1) * m * n];
                let as_ = &av.data()[s * m * k..(s + 1) * m * k];
                let bs = &bv.data()[s * k * n..(s + 1) * k * n];
                let ga_s = &mut ga[s * m * k..(s + 1) * m * k];
                let gb_s = &mut gb[s * k * n..(s + 1) * k * n];
                if *b_transposed {
                    // C = A·Bᵀ with B stored n×k
                    tensor::mm_nn(m, n, k, gs, bs, ga_s);
                    tensor::mm_tn(m, n, k, gs, as_, gb_s);
                } else {
                    tensor::mm_nt(m, n, k, gs, bs, ga_s);
                    tensor::mm_tn(m, k, n, as_, gs, gb_s);
                }
            }
            vec![
                (*a, Tensor::from_shape(av.shape().clone(), ga)),
                (*b, Tensor::from_shape(bv.shape().clone(), gb)),
            ]
        }
        Op::Add(a, b, bc) => {
            let rb = Tensor::from_shape(val(*b).shape().clone(), bc.reduce(g.data(), val(*b).numel()));
            vec![(*a, g.clone()), (*b, rb)]
        }
        Op::Sub(a, b, bc) => {
            let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
            let rb = Tensor::from_shape(val(*b).shape().clone(), bc.reduce(&neg, val(*b).numel()));
            vec![(*a, g.clone()), (*b, rb)]
        }
        Op::Mul(a, b, bc) => {
            let (av, bv) = (val(*a), val(*b));
            let ga: Vec<f64> = (0..g.numel())
                .map(|i| g.data()[i] * bv.data()[bc.index(i)])
                .collect();
            let prod: Vec<f64> = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
            vec![
                (*a, Tensor::from_shape(av.shape().clone(), ga)),
                (*b, Tensor::from_shape(bv.shape().clone(), bc.reduce(&prod, bv.numel()))),
            ]
        }
        Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Sigmoid(a) => vec![(*a, ew(g, y, |g, s| g * s * (1.0 - s)))],
        Op::Tanh(a) => vec![(*a, ew(g, y, |g, t| g * (1.0 - t * t)))],
        Op::Relu(a) => vec![(*a, ew(g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))],
        Op::Exp(a) => vec![(*a, ew(g, y, |g, e| g * e))],
        Op::Log(a) => vec![(*a, ew(g, val(*a), |g, x| g / x))],
        Op::Softmax(a, axis) => {
            let (outer, len, inner) = y.shape().around(*axis);
            let mut out = vec![0.0; y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let dot: f64 = (0..len).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
                    for j in 0..len {
                        out[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
                    }
                }
            }
            vec![(*a, Tensor::from_shape(y.shape().clone(), out))]
        }
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).dims(), g.item()))],
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            vec![(*a, Tensor::full(val(*a).dims(), g.item() / n))]
        }
        Op::MeanAxis(a, axis) => {
            let av = val(*a);
            let (outer, len, inner) = av.shape().around(*axis);
            let mut out = vec![0.0; av.numel()];
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        out[o * len * inner + j * inner + i] = g.data()[o * inner + i] / len as f64;
                    }
                }
            }
            vec![(*a, Tensor::from_shape(av.shape().clone(), out))]
        }
        Op::Reshape(a) => vec![(
            *a,
            Tensor::from_shape(val(*a).shape().clone(), g.data().to_vec()),
        )],
        Op::Permute(a, axes) => {
            let back = tensor::permute(g, &tensor::inverse_permutation(axes))
                .expect("inverse permutation is valid");
            vec![(*a, back)]
        }
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let len = val(p).dims()[*axis];
                    let piece = tensor::narrow(g, *axis, offset, len).expect("concat slice");
                    offset += len;
                    (p, piece)
                })
                .collect()
        }
        Op::Narrow { a, axis, start } => {
            let av = val(*a);
            let (outer, full, inner) = av.shape().around(*axis);
            let len = g.dims()[*axis];
            let mut out = vec![0.0; av.numel()];
            for o in 0..outer {
                let dst = o * full * inner + start * inner;
                let src = o * len * inner;
                out[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            vec![(*a, Tensor::from_shape(av.shape().clone(), out))]
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let gm = val(*gamma);
            let d = gm.numel();
            let rows = xhat.numel() / d;
            let mut gx = vec![0.0; xhat.numel()];
            let mut ggamma = vec![0.0; d];
            let mut gbeta = vec![0.0; d];
            for r in 0..rows {
                let gr = &g.data()[r * d..(r + 1) * d];
                let xr = &xhat.data()[r * d..(r + 1) * d];
                let mut mean_dxh = 0.0;
                let mut mean_dxh_xh = 0.0;
                for c in 0..d {
                    ggamma[c] += gr[c] * xr[c];
                    gbeta[c] += gr[c];
                    let dxh = gr[c] * gm.data()[c];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xr[c];
                }
                mean_dxh /= d as f64;
                mean_dxh_xh /= d as f64;
                for c in 0..d {
                    let dxh = gr[c] * gm.data()[c];
                    gx[r * d + c] = rstd[r] * (dxh - mean_dxh - xr[c] * mean_dxh_xh);
                }
            }
            vec![
                (*x, Tensor::from_shape(xhat.shape().clone(), gx)),
                (*gamma, Tensor::from_shape(gm.shape().clone(), ggamma)),
                (*beta, Tensor::from_shape(gm.shape().clone(), gbeta)),
            ]
        }
        Op::Custom { inputs, backward } => {
            let vals: Vec<Rc<Tensor>> = inputs.iter().map(|&i| Rc::clone(&nodes[i].value)).collect();
            inputs.iter().copied().zip(backward(&vals, y, g)).collect()
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.value().dims().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Position of this node on its tape.
    pub(crate) fn index(&self) -> usize {
        self.id
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.product("matmul", rhs, false, false)
    }

    /// `self · rhsᵀ` for rank-2 tensors, the layout of a `[out×in]` weight.
    pub fn matmul_bt(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.product("matmul_bt", rhs, true, false)
    }

    /// Batched product over a shared leading axis: `[B×m×k]·[B×k×n]`.
    pub fn bmm(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.product("bmm", rhs, false, true)
    }

    /// Batched `self · rhsᵀ`: `[B×m×k]·[B×n×k]ᵀ`.
    pub fn bmm_bt(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.product("bmm_bt", rhs, true, true)
    }

    fn product(self, name: &'static str, rhs: Var<'t>, bt: bool, batched: bool) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let (av, bv) = (self.value(), rhs.value());
        let (ad, bd) = (av.dims(), bv.dims());
        let rank = if batched { 3 } else { 2 };
        if ad.len() != rank || bd.len() != rank || (batched && ad[0] != bd[0]) {
            return Err(StoneError::dims(name, ad, bd));
        }
        let off = rank - 2;
        let (m, k) = (ad[off], ad[off + 1]);
        let (kb, n) = if bt { (bd[off + 1], bd[off]) } else { (bd[off], bd[off + 1]) };
        if k != kb {
            return Err(StoneError::dims(name, ad, bd));
        }
        let batch = if batched { ad[0] } else { 1 };
        let mut out = vec![0.0; batch * m * n];
        for s in 0..batch {
            let a = &av.data()[s * m * k..(s + 1) * m * k];
            let b = &bv.data()[s * k * n..(s + 1) * k * n];
            let c = &mut out[s * m * n..(s + 1) * m * n];
            if bt {
                tensor::mm_nt(m, k, n, a, b, c);
            } else {
                tensor::mm_nn(m, k, n, a, b, c);
            }
        }
        let dims: Vec<usize> = if batched { vec![batch, m, n] } else { vec![m, n] };
        let op = Op::MatMul {
            a: self.id,
            b: rhs.id,
            batch,
            m,
            k,
            n,
            b_transposed: bt,
        };
        self.tape
            .push(name, Tensor::from_vec(&dims, out)?, op, &[self.id, rhs.id])
    }

    fn binary(
        self,
        name: &'static str,
        rhs: Var<'t>,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let (av, bv) = (self.value(), rhs.value());
        let bc = Broadcast::resolve(name, av.shape(), bv.shape())?;
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[bc.index(i)]))
            .collect();
        let out = Tensor::from_shape(av.shape().clone(), data);
        self.tape
            .push(name, out, op(self.id, rhs.id, bc), &[self.id, rhs.id])
    }

    /// Elementwise sum; `rhs` may broadcast over singleton or missing leading axes.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary("add", rhs, |a, b| a + b, Op::Add)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary("sub", rhs, |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary("mul", rhs, |a, b| a * b, Op::Mul)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v * c);
        self.tape.push("scale", out, Op::Scale(self.id, c), &[self.id])
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v + c);
        self.tape.push("add_scalar", out, Op::AddScalar(self.id), &[self.id])
    }

    fn unary(self, name: &'static str, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var<'t>> {
        let out = self.value().map(f);
        self.tape.push(name, out, op(self.id), &[self.id])
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", sigmoid, Op::Sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", f64::tanh, Op::Tanh)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", |v| v.max(0.0), Op::Relu)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", f64::exp, Op::Exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        if let Some(bad) = self.value().data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(StoneError::Domain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        self.unary("log", f64::ln, Op::Log)
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let v = self.value();
        if axis >= v.shape().rank() {
            return Err(StoneError::Contract(format!(
                "softmax axis {axis} out of range for {:?}",
                v.shape()
            )));
        }
        let (outer, len, inner) = v.shape().around(axis);
        let mut out = vec![0.0; v.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| v.data()[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (v.data()[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let out = Tensor::from_shape(v.shape().clone(), out);
        self.tape.push("softmax", out, Op::Softmax(self.id, axis), &[self.id])
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let total = self.value().data().iter().sum();
        self.tape
            .push("sum", Tensor::scalar(total), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.value();
        let mean = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.tape
            .push("mean", Tensor::scalar(mean), Op::Mean(self.id), &[self.id])
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let v = self.value();
        if axis >= v.shape().rank() {
            return Err(StoneError::Contract(format!(
                "mean axis {axis} out of range for {:?}",
                v.shape()
            )));
        }
        let (outer, len, inner) = v.shape().around(axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += v.data()[o * len * inner + j * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|x| *x /= len as f64);
        let mut dims = v.dims().to_vec();
        dims.remove(axis);
        let out = Tensor::from_shape(Shape::from(dims.as_slice()), out);
        self.tape
            .push("mean_axis", out, Op::MeanAxis(self.id, axis), &[self.id])
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(dims)?;
        self.tape.push("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let out = tensor::permute(&self.value(), axes)?;
        self.tape
            .push("permute", out, Op::Permute(self.id, axes.to_vec()), &[self.id])
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let out = tensor::narrow(&self.value(), axis, start, len)?;
        let op = Op::Narrow {
            a: self.id,
            axis,
            start,
        };
        self.tape.push("narrow", out, op, &[self.id])
    }

    /// Picks `index` along `axis`, dropping that axis.
    pub fn select(self, axis: usize, index: usize) -> Result<Var<'t>> {
        let mut dims = self.dims();
        if axis >= dims.len() {
            return Err(StoneError::Contract(format!(
                "select axis {axis} out of range for {dims:?}"
            )));
        }
        dims.remove(axis);
        self.narrow(axis, index, 1)?.reshape(&dims)
    }

    /// Normalizes over the last axis, then applies `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (xv, gv, bv) = (self.value(), gamma.value(), beta.value());
        let d = *xv.dims().last().unwrap_or(&1);
        if gv.dims() != [d] || bv.dims() != [d] {
            return Err(StoneError::dims("layer_norm", xv.dims(), gv.dims()));
        }
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut out = vec![0.0; xv.numel()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = gv.data()[c] * h + bv.data()[c];
            }
        }
        let op = Op::LayerNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            xhat: Tensor::from_shape(xv.shape().clone(), xhat),
            rstd,
        };
        let out = Tensor::from_shape(xv.shape().clone(), out);
        self.tape
            .push("layer_norm", out, op, &[self.id, gamma.id, beta.id])
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
