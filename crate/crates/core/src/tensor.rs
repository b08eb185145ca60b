//! Dense row-major `f64` arrays and the raw kernels the tape is built on.

use std::fmt;

use crate::error::{Result, StoneError};

/// Ordered list of extents. Rank 0 is a scalar holding one element.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(StoneError::Contract(format!(
                "shape {dims:?} has a zero extent"
            )));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Splits the shape around `axis` into (outer, len, inner) element counts.
    pub(crate) fn around(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.0[..axis].iter().product();
        let inner = self.0[axis + 1..].iter().product();
        (outer, self.0[axis], inner)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[usize]> for Shape {
    fn from(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(StoneError::Contract(format!(
                "buffer of {} values does not fill shape {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_shape(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let shape = Shape(dims.to_vec());
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.rank());
        index
            .iter()
            .zip(self.dims())
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(StoneError::dims("reshape", self.dims(), dims));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Copies rows `[start, start+len)` along axis 0.
    pub fn rows(&self, start: usize, len: usize) -> Result<Tensor> {
        narrow(self, 0, start, len)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| StoneError::Contract("stack of zero tensors".into()))?;
        let mut dims = vec![items.len()];
        dims.extend_from_slice(first.dims());
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(StoneError::dims("stack", first.dims(), t.dims()));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&dims, data)
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`; each output element accumulates over `k` in order.
pub(crate) fn mm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn mm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for p in 0..m {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..k {
            let av = a[p * k + i];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`, routed through a transposed copy of `b`.
pub(crate) fn mm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let bt = transpose2(n, k, b);
    mm_nn(m, k, n, a, &bt, c);
}

/// Transposes a row-major `rows×cols` buffer.
pub(crate) fn transpose2(rows: usize, cols: usize, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// How a right-hand operand maps onto the left-hand operand's elements.
#[derive(Debug, Clone)]
pub(crate) enum Broadcast {
    Same,
    /// rhs shape is a suffix of lhs shape: rhs index = i % len.
    Tile(usize),
    /// Arbitrary singleton expansion: rhs index per lhs element.
    General(Vec<usize>),
}

impl Broadcast {
    /// Resolves right-aligned broadcasting of `rhs` into `lhs`.
    pub(crate) fn resolve(op: &'static str, lhs: &Shape, rhs: &Shape) -> Result<Self> {
        if lhs == rhs {
            return Ok(Broadcast::Same);
        }
        let (ld, rd) = (lhs.dims(), rhs.dims());
        if rd.len() > ld.len() {
            return Err(StoneError::dims(op, ld, rd));
        }
        let lead = ld.len() - rd.len();
        if ld[lead..] == *rd {
            return Ok(Broadcast::Tile(rhs.numel()));
        }
        for (l, r) in ld[lead..].iter().zip(rd) {
            if r != l && *r != 1 {
                return Err(StoneError::dims(op, ld, rd));
            }
        }
        // rhs strides expressed on lhs axes; broadcast axes get stride 0.
        let mut strides = vec![0usize; ld.len()];
        let mut acc = 1;
        for (axis, &r) in rd.iter().enumerate().rev() {
            strides[lead + axis] = if r == 1 { 0 } else { acc };
            acc *= r;
        }
        let mut map = Vec::with_capacity(lhs.numel());
        let mut idx = vec![0usize; ld.len()];
        for _ in 0..lhs.numel() {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for axis in (0..ld.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < ld[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(Broadcast::General(map))
    }

    #[inline]
    pub(crate) fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Tile(len) => i % len,
            Broadcast::General(map) => map[i],
        }
    }

    /// Sums a lhs-shaped buffer back onto the rhs shape.
    pub(crate) fn reduce(&self, src: &[f64], rhs_len: usize) -> Vec<f64> {
        match self {
            Broadcast::Same => src.to_vec(),
            _ => {
                let mut out = vec![0.0; rhs_len];
                for (i, v) in src.iter().enumerate() {
                    out[self.index(i)] += v;
                }
                out
            }
        }
    }
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub(crate) fn permute(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let dims = t.dims();
    let rank = dims.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank
        || axes
            .iter()
            .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
    {
        return Err(StoneError::Contract(format!(
            "invalid permutation {axes:?} for rank {rank}"
        )));
    }
    let mut in_strides = vec![1usize; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        in_strides[a] = in_strides[a + 1] * dims[a + 1];
    }
    let out_dims: Vec<usize> = axes.iter().map(|&a| dims[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut data = Vec::with_capacity(t.numel());
    let mut idx = vec![0usize; rank];
    for _ in 0..t.numel() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data.push(t.data[off]);
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out_dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(Tensor::from_shape(Shape(out_dims), data))
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Copies `[start, start+len)` along `axis`.
pub(crate) fn narrow(t: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= t.shape.rank() || len == 0 || start + len > t.dims()[axis] {
        return Err(StoneError::Contract(format!(
            "narrow [{start}, {}) on axis {axis} of {:?}",
            start + len,
            t.shape
        )));
    }
    let (outer, full, inner) = t.shape.around(axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full * inner + start * inner;
        data.extend_from_slice(&t.data[base..base + len * inner]);
    }
    let mut dims = t.dims().to_vec();
    dims[axis] = len;
    Ok(Tensor::from_shape(Shape(dims), data))
}
