//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] walks the record in reverse and returns the cotangent
//! of every node that depends on a differentiable leaf. Each `Op` variant
//! below is one differentiable operation; its forward lives in the `Var`
//! method that pushes it, its backward in `Tape::backward`.
//!
//! Shape errors inside a tape are programming errors and panic with the
//! same message the checked free functions return.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use super::{axis_split, kernels, Scalar, Tensor};
use crate::error::Error;

enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Gelu(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Sum(usize),
    SmoothedCe {
        logits: usize,
        target: usize,
        eps: S,
        probs: Vec<S>,
    },
}

struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Scalar> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn dim_panic(op: &'static str, lhs: &[usize], rhs: &[usize]) -> ! {
    panic!(
        "{}",
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    )
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var<'_, S> {
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&self, value: Arc<Tensor<S>>, op: Op<S>, needs_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&self, value: Arc<Tensor<S>>) -> Var<'_, S> {
        self.push_arc(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Arc<Tensor<S>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Cotangents of every node reachable from `root`, seeded with ones.
    pub fn backward(&self, root: Var<'_, S>) -> Grads<S> {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::ones(nodes[root.id].value.shape()));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |target: usize, t: Tensor<S>| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if nodes[*a].needs_grad {
                        let bt = bv.transpose();
                        let mut da = vec![S::zero(); m * k];
                        kernels::matmul_into(g.data(), bt.data(), &mut da, m, n, k);
                        acc(*a, Tensor::from_vec(&[m, k], da).unwrap());
                    }
                    if nodes[*b].needs_grad {
                        let at = av.transpose();
                        let mut db = vec![S::zero(); k * n];
                        kernels::matmul_into(at.data(), g.data(), &mut db, k, m, n);
                        acc(*b, Tensor::from_vec(&[k, n], db).unwrap());
                    }
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Reshape(a) => acc(*a, g.reshape(val(*a).shape()).unwrap()),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddBias(x, b) => {
                    let n = g.cols();
                    let mut db = vec![S::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    acc(*b, Tensor::from_vec(&[n], db).unwrap());
                    acc(*x, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.mul(val(*b)).unwrap());
                    acc(*b, g.mul(val(*a)).unwrap());
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s)),
                Op::Softmax { x, axis } => {
                    let y = &node.value;
                    let (outer, n, inner) = axis_split(y.shape(), *axis);
                    let mut dx = vec![S::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let mut dot = S::zero();
                            for j in 0..n {
                                let p = base + j * inner;
                                dot = dot + g.data()[p] * y.data()[p];
                            }
                            for j in 0..n {
                                let p = base + j * inner;
                                dx[p] = y.data()[p] * (g.data()[p] - dot);
                            }
                        }
                    }
                    acc(*x, Tensor::from_vec(y.shape(), dx).unwrap());
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let d = g.cols();
                    let dn = S::lit(d as f64);
                    let gam = val(*gamma);
                    let mut dgamma = vec![S::zero(); d];
                    let mut dbeta = vec![S::zero(); d];
                    let mut dx = vec![S::zero(); g.len()];
                    for (r, (grow, xrow)) in g.data().chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut sum_dxh = S::zero();
                        let mut sum_dxh_xh = S::zero();
                        for j in 0..d {
                            dgamma[j] = dgamma[j] + grow[j] * xrow[j];
                            dbeta[j] = dbeta[j] + grow[j];
                            let dxh = grow[j] * gam.data()[j];
                            sum_dxh = sum_dxh + dxh;
                            sum_dxh_xh = sum_dxh_xh + dxh * xrow[j];
                        }
                        let scale = inv_std[r] / dn;
                        for j in 0..d {
                            let dxh = grow[j] * gam.data()[j];
                            dx[r * d + j] = scale * (dn * dxh - sum_dxh - xrow[j] * sum_dxh_xh);
                        }
                    }
                    acc(*gamma, Tensor::from_vec(&[d], dgamma).unwrap());
                    acc(*beta, Tensor::from_vec(&[d], dbeta).unwrap());
                    acc(*x, Tensor::from_vec(g.shape(), dx).unwrap());
                }
                Op::Gelu(a) => {
                    let xv = val(*a);
                    acc(
                        *a,
                        g.zip_map(xv, "gelu", |gv, xv| gv * kernels::gelu_grad(xv))
                            .unwrap(),
                    );
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        if nodes[p].needs_grad {
                            let mut part = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                part.extend_from_slice(
                                    &g.data()[r * total + offset..r * total + offset + w],
                                );
                            }
                            acc(p, Tensor::from_vec(val(p).shape(), part).unwrap());
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).len();
                        if nodes[p].needs_grad {
                            let part = g.data()[offset..offset + len].to_vec();
                            acc(p, Tensor::from_vec(val(p).shape(), part).unwrap());
                        }
                        offset += len;
                    }
                }
                Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.data()[0])),
                Op::SmoothedCe {
                    logits,
                    target,
                    eps,
                    probs,
                } => {
                    let c = probs.len();
                    let off = *eps / S::lit(c as f64);
                    let scale = g.data()[0];
                    let dl: Vec<S> = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| {
                            let q = if i == *target { S::one() - *eps + off } else { off };
                            (p - q) * scale
                        })
                        .collect();
                    acc(*logits, Tensor::from_vec(val(*logits).shape(), dl).unwrap());
                }
            }
        }
        Grads { grads }
    }
}

/// Cotangents produced by [`Tape::backward`].
pub struct Grads<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    /// Gradient of a leaf, `None` when the root does not depend on it.
    pub fn get(&self, v: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads[v.id].as_ref()
    }

    /// Gradient of a leaf, zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var<'_, S>) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }

    pub fn take(&mut self, v: Var<'_, S>) -> Option<Tensor<S>> {
        self.grads[v.id].take()
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<S>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn needs(&self) -> bool {
        self.tape.needs(self.id)
    }

    fn same_tape(&self, other: &Var<'t, S>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn matmul(self, other: Var<'t, S>) -> Var<'t, S> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            dim_panic("matmul", a.shape(), b.shape());
        }
        let out = super::matmul(&a, &b).unwrap();
        self.tape.push(
            out,
            Op::MatMul(self.id, other.id),
            self.needs() || other.needs(),
        )
    }

    pub fn transpose(self) -> Var<'t, S> {
        let out = self.value().transpose();
        self.tape.push(out, Op::Transpose(self.id), self.needs())
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, S> {
        let out = self
            .value()
            .reshape(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(out, Op::Reshape(self.id), self.needs())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t, S>) -> Var<'t, S> {
        self.same_tape(&other);
        let out = self
            .value()
            .add(&other.value())
            .unwrap_or_else(|e| panic!("{e}"));
        self.tape
            .push(out, Op::Add(self.id, other.id), self.needs() || other.needs())
    }

    /// Adds a length-`n` bias to every row of a `…×n` tensor.
    pub fn add_bias(self, bias: Var<'t, S>) -> Var<'t, S> {
        self.same_tape(&bias);
        let (x, b) = (self.value(), bias.value());
        let n = x.cols();
        if b.shape() != [n] {
            dim_panic("add_bias", x.shape(), b.shape());
        }
        let mut out = (*x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
        self.tape.push(
            out,
            Op::AddBias(self.id, bias.id),
            self.needs() || bias.needs(),
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t, S>) -> Var<'t, S> {
        self.same_tape(&other);
        let out = self
            .value()
            .mul(&other.value())
            .unwrap_or_else(|e| panic!("{e}"));
        self.tape
            .push(out, Op::Mul(self.id, other.id), self.needs() || other.needs())
    }

    pub fn scale(self, s: S) -> Var<'t, S> {
        let out = self.value().scale(s);
        self.tape.push(out, Op::Scale(self.id, s), self.needs())
    }

    /// NaN inputs propagate so the loss can report them.
    pub fn softmax(self, axis: usize) -> Var<'t, S> {
        let x = self.value();
        assert!(axis < x.rank(), "softmax axis {axis} out of range for {:?}", x.shape());
        let mut data = x.data().to_vec();
        let (outer, n, inner) = super::axis_split(x.shape(), axis);
        super::kernels::softmax_strided(&mut data, outer, n, inner);
        let out = Tensor::from_vec(x.shape(), data).expect("same shape");
        self.tape
            .push(out, Op::Softmax { x: self.id, axis }, self.needs())
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Var<'t, S> {
        let axis = self.shape().len() - 1;
        self.softmax(axis)
    }

    pub fn layer_norm(self, gamma: Var<'t, S>, beta: Var<'t, S>, eps: S) -> Var<'t, S> {
        let (x, g, b) = (self.value(), gamma.value(), beta.value());
        let d = x.cols();
        if g.shape() != [d] || b.shape() != [d] {
            dim_panic("layer_norm", x.shape(), g.shape());
        }
        let mut xhat = vec![S::zero(); x.len()];
        let mut inv_std = vec![S::zero(); x.rows()];
        kernels::layer_norm_rows(x.data(), &mut xhat, &mut inv_std, d, eps);
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for ((v, &gv), &bv) in row.iter_mut().zip(g.data()).zip(b.data()) {
                *v = *v * gv + bv;
            }
        }
        let needs = self.needs() || gamma.needs() || beta.needs();
        self.tape.push(
            Tensor::from_vec(x.shape(), out).unwrap(),
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            needs,
        )
    }

    pub fn gelu(self) -> Var<'t, S> {
        let out = super::gelu(&self.value());
        self.tape.push(out, Op::Gelu(self.id), self.needs())
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[Var<'t, S>]) -> Var<'t, S> {
        let first = parts.first().expect("concat of nothing");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].shape()[0];
        for v in &values {
            if v.rank() != 2 || v.shape()[0] != rows {
                dim_panic("concat_cols", values[0].shape(), v.shape());
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                out.extend_from_slice(v.row(r));
            }
        }
        let needs = parts.iter().any(|p| p.needs());
        first.tape.push(
            Tensor::from_vec(&[rows, total], out).unwrap(),
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            needs,
        )
    }

    /// Stacks tensors with equal trailing extent into a `rows × cols` matrix.
    pub fn concat_rows(parts: &[Var<'t, S>]) -> Var<'t, S> {
        let first = parts.first().expect("concat of nothing");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].cols();
        let mut out = Vec::new();
        for v in &values {
            if v.cols() != cols {
                dim_panic("concat_rows", values[0].shape(), v.shape());
            }
            out.extend_from_slice(v.data());
        }
        let rows = out.len() / cols;
        let needs = parts.iter().any(|p| p.needs());
        first.tape.push(
            Tensor::from_vec(&[rows, cols], out).unwrap(),
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            needs,
        )
    }

    pub fn sum(self) -> Var<'t, S> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), self.needs())
    }

    /// Cross-entropy between `softmax(self)` and the smoothed target
    /// `(1−eps)·onehot(target) + eps/C`. `self` holds the C logits.
    pub fn smoothed_cross_entropy(self, target: usize, eps: S) -> Var<'t, S> {
        let logits = self.value();
        let c = logits.len();
        assert!(target < c, "target {target} out of range for {c} classes");
        let max = logits.data().iter().fold(S::neg_infinity(), |m, &x| m.max(x));
        let lse = max
            + logits
                .data()
                .iter()
                .map(|&x| (x - max).exp())
                .sum::<S>()
                .ln();
        let off = eps / S::lit(c as f64);
        let mut loss = S::zero();
        let mut probs = Vec::with_capacity(c);
        for (i, &x) in logits.data().iter().enumerate() {
            let logp = x - lse;
            let q = if i == target { S::one() - eps + off } else { off };
            loss = loss - q * logp;
            probs.push(logp.exp());
        }
        self.tape.push(
            Tensor::scalar(loss),
            Op::SmoothedCe {
                logits: self.id,
                target,
                eps,
                probs,
            },
            self.needs(),
        )
    }
}
