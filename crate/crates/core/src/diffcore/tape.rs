//! Append-only operation tape with reverse-mode backward.
//!
//! Values live on the tape; [`Var`] is a plain index into it. Every primitive
//! records its operands, so backward simply walks the node list from the
//! root towards the front, which is a valid reverse topological order
//! because an operand is always appended before any node that uses it.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::scalar::{gemm, MatMut, MatRef};
use super::{DiffError, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation implemented outside this module.
pub trait CustomOp<S: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order. `None` means the
    /// input receives no contribution.
    fn backward(
        &self,
        grad_out: &Tensor<S>,
        inputs: &[&Tensor<S>],
        output: &Tensor<S>,
    ) -> Vec<Option<Tensor<S>>>;
}

enum Op<S: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    Offset(usize),
    MatMul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Reshape(usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterRows(usize, Rc<[usize]>),
    Custom(Vec<usize>, Box<dyn CustomOp<S>>),
}

struct Node<S: Scalar> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
    trainable: bool,
}

/// Records primitive operations for one forward pass.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    checked: bool,
    consumed: Cell<bool>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Sum `g` (shape of the long operand) down to `n` trailing elements.
fn reduce_leading<S: Scalar>(g: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n];
    for chunk in g.chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o = *o + v;
        }
    }
    out
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), checked: false, consumed: Cell::new(false) }
    }

    /// A tape that rejects non-finite operands.
    pub fn checked() -> Self {
        Self { checked: true, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, needs_grad: bool, trainable: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, needs_grad, trainable });
        Var(nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn check(&self, op: &'static str, ids: &[usize]) -> Result<(), DiffError> {
        if !self.checked {
            return Ok(());
        }
        let nodes = self.nodes.borrow();
        for &i in ids {
            if !nodes[i].value.all_finite() {
                return Err(DiffError::NonFinite { op });
            }
        }
        Ok(())
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn leaf(&self, value: Tensor<S>) -> Result<Var, DiffError> {
        if self.checked && !value.all_finite() {
            return Err(DiffError::NonFinite { op: "leaf" });
        }
        Ok(self.push(value, Op::Leaf, true, true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<S>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: fn(usize, usize) -> Op<S>,
    ) -> Result<Var, DiffError> {
        self.check(name, &[a.0, b.0])?;
        let (va, vb) = (self.value(a), self.value(b));
        if !is_suffix(va.shape(), vb.shape()) {
            return Err(DiffError::ShapeMismatch {
                op: name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let n = vb.len();
        let data: Vec<S> = va
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
            .collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(out, op(a.0, b.0), self.needs(&[a.0, b.0]), false))
    }

    /// Elementwise `a + b`; `b` may broadcast over leading dimensions of `a`.
    pub fn add(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    /// Elementwise `a - b`; `b` may broadcast over leading dimensions of `a`.
    pub fn sub(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise `a ⊙ b`; `b` may broadcast over leading dimensions of `a`.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&self, a: Var, c: S) -> Result<Var, DiffError> {
        self.check("scale", &[a.0])?;
        let out = self.value(a).map(|x| x * c);
        Ok(self.push(out, Op::Scale(a.0, c), self.needs(&[a.0]), false))
    }

    /// `a + c` for a constant tensor `c` of the same shape.
    pub fn offset(&self, a: Var, c: &Tensor<S>) -> Result<Var, DiffError> {
        self.check("offset", &[a.0])?;
        let va = self.value(a);
        if va.shape() != c.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "offset",
                lhs: va.shape().to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let mut out = (*va).clone();
        out.add_assign(c);
        Ok(self.push(out, Op::Offset(a.0), self.needs(&[a.0]), false))
    }

    /// `[m,k] · [k,n] → [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check("matmul", &[a.0, b.0])?;
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        gemm(
            S::one(),
            MatRef::new(va.data(), m, k),
            MatRef::new(vb.data(), k, n),
            S::zero(),
            MatMut::new(&mut out, m, n),
        );
        let out = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul(a.0, b.0), self.needs(&[a.0, b.0]), false))
    }

    pub fn relu(&self, a: Var) -> Result<Var, DiffError> {
        self.check("relu", &[a.0])?;
        let out = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        Ok(self.push(out, Op::Relu(a.0), self.needs(&[a.0]), false))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var, DiffError> {
        self.check("sigmoid", &[a.0])?;
        let out = self.value(a).map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(a.0), self.needs(&[a.0]), false))
    }

    /// Softmax over the last dimension, with row-max subtraction.
    pub fn softmax_rows(&self, a: Var) -> Result<Var, DiffError> {
        self.check("softmax", &[a.0])?;
        let va = self.value(a);
        let d = va.last_dim();
        let mut out = va.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        let out = Tensor::from_vec(va.shape(), out)?;
        Ok(self.push(out, Op::SoftmaxRows(a.0), self.needs(&[a.0]), false))
    }

    pub fn sum(&self, a: Var) -> Result<Var, DiffError> {
        self.check("sum", &[a.0])?;
        let out = Tensor::scalar(self.value(a).sum());
        Ok(self.push(out, Op::Sum(a.0), self.needs(&[a.0]), false))
    }

    pub fn mean(&self, a: Var) -> Result<Var, DiffError> {
        self.check("mean", &[a.0])?;
        let va = self.value(a);
        let out = Tensor::scalar(va.sum() / S::c(va.len() as f64));
        Ok(self.push(out, Op::Mean(a.0), self.needs(&[a.0]), false))
    }

    /// Mean over all leading dimensions: `[..., d] → [d]`.
    pub fn mean_rows(&self, a: Var) -> Result<Var, DiffError> {
        self.check("mean_rows", &[a.0])?;
        let va = self.value(a);
        let d = va.last_dim();
        let inv = S::one() / S::c(va.rows() as f64);
        let out: Vec<S> = reduce_leading(va.data(), d).into_iter().map(|v| v * inv).collect();
        let out = Tensor::from_vec(&[d], out)?;
        Ok(self.push(out, Op::MeanRows(a.0), self.needs(&[a.0]), false))
    }

    /// Concatenate 2-D operands with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var, DiffError> {
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.check("concat_cols", &ids)?;
        let vals: Vec<_> = parts.iter().map(|&v| self.value(v)).collect();
        let rows = vals.first().ok_or(DiffError::Empty { op: "concat_cols" })?.rows();
        for v in &vals {
            if v.rows() != rows || v.shape().len() != 2 {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vals[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        let total: usize = vals.iter().map(|v| v.last_dim()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &vals {
                let d = v.last_dim();
                out.extend_from_slice(&v.data()[r * d..(r + 1) * d]);
            }
        }
        let out = Tensor::from_vec(&[rows, total], out)?;
        Ok(self.push(out, Op::ConcatCols(ids.clone()), self.needs(&ids), false))
    }

    /// Stack 2-D operands with equal column counts along rows.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var, DiffError> {
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.check("concat_rows", &ids)?;
        let vals: Vec<_> = parts.iter().map(|&v| self.value(v)).collect();
        let d = vals.first().ok_or(DiffError::Empty { op: "concat_rows" })?.last_dim();
        let mut out = Vec::new();
        for v in &vals {
            if v.last_dim() != d || v.shape().len() != 2 {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vals[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            out.extend_from_slice(v.data());
        }
        let rows = out.len() / d;
        let out = Tensor::from_vec(&[rows, d], out)?;
        Ok(self.push(out, Op::ConcatRows(ids.clone()), self.needs(&ids), false))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let out = (*self.value(a)).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a.0), self.needs(&[a.0]), false))
    }

    /// Select rows `idx` of a 2-D operand.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var, DiffError> {
        self.check("gather_rows", &[a.0])?;
        let va = self.value(a);
        let d = va.last_dim();
        let rows = va.rows();
        if idx.is_empty() {
            return Err(DiffError::Empty { op: "gather_rows" });
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= rows {
                return Err(DiffError::IndexOutOfRange { op: "gather_rows", index: i, len: rows });
            }
            out.extend_from_slice(&va.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::from_vec(&[idx.len(), d], out)?;
        Ok(self.push(out, Op::GatherRows(a.0, idx.into()), self.needs(&[a.0]), false))
    }

    /// Scatter-add the rows of `a` into a zero `[total, d]` output at `idx`.
    pub fn scatter_rows(&self, a: Var, idx: &[usize], total: usize) -> Result<Var, DiffError> {
        self.check("scatter_rows", &[a.0])?;
        let va = self.value(a);
        let d = va.last_dim();
        if idx.len() != va.rows() {
            return Err(DiffError::ShapeMismatch {
                op: "scatter_rows",
                lhs: va.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut out = vec![S::zero(); total * d];
        for (r, &i) in idx.iter().enumerate() {
            if i >= total {
                return Err(DiffError::IndexOutOfRange { op: "scatter_rows", index: i, len: total });
            }
            for c in 0..d {
                out[i * d + c] = out[i * d + c] + va.data()[r * d + c];
            }
        }
        let out = Tensor::from_vec(&[total, d], out)?;
        Ok(self.push(out, Op::ScatterRows(a.0, idx.into()), self.needs(&[a.0]), false))
    }

    /// Record an externally computed value with its backward rule.
    pub fn custom(
        &self,
        inputs: &[Var],
        output: Tensor<S>,
        op: Box<dyn CustomOp<S>>,
    ) -> Result<Var, DiffError> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        self.check(op.name(), &ids)?;
        let needs = self.needs(&ids);
        Ok(self.push(output, Op::Custom(ids, op), needs, false))
    }

    /// Backward from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>, DiffError> {
        let shape = self.shape(root);
        if shape.iter().product::<usize>() != 1 {
            return Err(DiffError::NotScalar { shape });
        }
        self.backward_with(root, Tensor::from_vec(&shape, vec![S::one()])?)
    }

    /// Backward from `root` with an explicit upstream gradient of its shape.
    pub fn backward_with(&self, root: Var, upstream: Tensor<S>) -> Result<Gradients<S>, DiffError> {
        if self.consumed.replace(true) {
            return Err(DiffError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.0].value.shape();
        if root_shape != upstream.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "backward",
                lhs: root_shape.to_vec(),
                rhs: upstream.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(upstream);
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |j: usize| -> &Tensor<S> { &nodes[j].value };
            let mut acc = |j: usize, t: Tensor<S>| {
                if !nodes[j].needs_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    let n = val(*b).len();
                    acc(*b, Tensor::from_vec(val(*b).shape(), reduce_leading(g.data(), n))?);
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    let n = val(*b).len();
                    let gb: Vec<S> = reduce_leading(g.data(), n).into_iter().map(|v| -v).collect();
                    acc(*b, Tensor::from_vec(val(*b).shape(), gb)?);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let n = vb.len();
                    if nodes[*a].needs_grad {
                        let ga: Vec<S> = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(k, &gv)| gv * vb.data()[k % n])
                            .collect();
                        acc(*a, Tensor::from_vec(va.shape(), ga)?);
                    }
                    if nodes[*b].needs_grad {
                        let prod: Vec<S> =
                            g.data().iter().zip(va.data()).map(|(&gv, &x)| gv * x).collect();
                        acc(*b, Tensor::from_vec(vb.shape(), reduce_leading(&prod, n))?);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(*a, g.map(|v| v * c));
                }
                Op::Offset(a) => acc(*a, g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    if nodes[*a].needs_grad {
                        let mut ga = vec![S::zero(); m * k];
                        gemm(
                            S::one(),
                            MatRef::new(g.data(), m, n),
                            MatRef::new(vb.data(), k, n).t(),
                            S::zero(),
                            MatMut::new(&mut ga, m, k),
                        );
                        acc(*a, Tensor::from_vec(&[m, k], ga)?);
                    }
                    if nodes[*b].needs_grad {
                        let mut gb = vec![S::zero(); k * n];
                        gemm(
                            S::one(),
                            MatRef::new(va.data(), m, k).t(),
                            MatRef::new(g.data(), m, n),
                            S::zero(),
                            MatMut::new(&mut gb, k, n),
                        );
                        acc(*b, Tensor::from_vec(&[k, n], gb)?);
                    }
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    let ga: Vec<S> = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                        .collect();
                    acc(*a, Tensor::from_vec(x.shape(), ga)?);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga: Vec<S> = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * yv * (S::one() - yv))
                        .collect();
                    acc(*a, Tensor::from_vec(y.shape(), ga)?);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let d = y.last_dim();
                    let mut ga = vec![S::zero(); y.len()];
                    for ((gr, yr), out) in g
                        .data()
                        .chunks_exact(d)
                        .zip(y.data().chunks_exact(d))
                        .zip(ga.chunks_exact_mut(d))
                    {
                        let dot: S = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(*a, Tensor::from_vec(y.shape(), ga)?);
                }
                Op::Sum(a) => {
                    let x = val(*a);
                    acc(*a, Tensor::full(x.shape(), g.item()));
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    let v = g.item() / S::c(x.len() as f64);
                    acc(*a, Tensor::full(x.shape(), v));
                }
                Op::MeanRows(a) => {
                    let x = val(*a);
                    let inv = S::one() / S::c(x.rows() as f64);
                    let row: Vec<S> = g.data().iter().map(|&v| v * inv).collect();
                    let ga: Vec<S> = (0..x.rows()).flat_map(|_| row.iter().copied()).collect();
                    acc(*a, Tensor::from_vec(x.shape(), ga)?);
                }
                Op::ConcatCols(parts) => {
                    let total = g.last_dim();
                    let rows = g.rows();
                    let mut col0 = 0;
                    for &p in parts {
                        let d = val(p).last_dim();
                        if nodes[p].needs_grad {
                            let mut gp = Vec::with_capacity(rows * d);
                            for r in 0..rows {
                                gp.extend_from_slice(&g.data()[r * total + col0..r * total + col0 + d]);
                            }
                            acc(p, Tensor::from_vec(val(p).shape(), gp)?);
                        }
                        col0 += d;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = val(p).len();
                        if nodes[p].needs_grad {
                            acc(p, Tensor::from_vec(val(p).shape(), g.data()[start..start + n].to_vec())?);
                        }
                        start += n;
                    }
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    acc(*a, g.reshaped(&shape)?);
                }
                Op::GatherRows(a, idx) => {
                    let x = val(*a);
                    let d = x.last_dim();
                    let mut ga = vec![S::zero(); x.len()];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..d {
                            ga[i * d + c] = ga[i * d + c] + g.data()[r * d + c];
                        }
                    }
                    acc(*a, Tensor::from_vec(x.shape(), ga)?);
                }
                Op::ScatterRows(a, idx) => {
                    let x = val(*a);
                    let d = x.last_dim();
                    let mut ga = Vec::with_capacity(x.len());
                    for &i in idx.iter() {
                        ga.extend_from_slice(&g.data()[i * d..(i + 1) * d]);
                    }
                    acc(*a, Tensor::from_vec(x.shape(), ga)?);
                }
                Op::Custom(inputs, op) => {
                    let ins: Vec<&Tensor<S>> = inputs.iter().map(|&j| val(j)).collect();
                    let outs = op.backward(&g, &ins, &node.value);
                    for (&j, gj) in inputs.iter().zip(outs) {
                        if let Some(gj) = gj {
                            if gj.len() != val(j).len() {
                                return Err(DiffError::ShapeMismatch {
                                    op: op.name(),
                                    lhs: val(j).shape().to_vec(),
                                    rhs: gj.shape().to_vec(),
                                });
                            }
                            acc(j, gj);
                        }
                    }
                }
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.trainable && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros_like(&node.value));
            } else if !node.trainable && i != root.0 {
                grads[i] = None;
            }
        }
        if !nodes[root.0].trainable {
            grads[root.0] = None;
        }
        Ok(Gradients { grads })
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros_like(other: &Tensor<S>) -> Self {
        Tensor::from_vec(other.shape(), vec![S::zero(); other.len()]).expect("same shape")
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
