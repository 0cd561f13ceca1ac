//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in construction order; that order is
//! a valid topological order, so [`Graph::backward`] simply walks the tape
//! in reverse, visiting each node once. Leaves are either constants or
//! references to entries of a [`ParamSet`]; gradients are reported per
//! parameter, with zeros for parameters the root does not reach.
//!
//! Broadcasting is limited to scalar-with-tensor ([`Graph::scale`],
//! [`Graph::add_scalar`]) and equal shapes. The two row/column helpers
//! ([`Graph::add_row`], [`Graph::mul_col`]) are explicit ops, not a general
//! broadcasting rule.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, Error, Result};
use crate::numcore::tensor::{matmul_into, Tensor};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

static NEXT_SET_TAG: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f64> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Named, ordered collection of learnable tensors owned by one network.
///
/// Clones keep the identity tag, so gradients recorded against a clone are
/// reported for the original as well.
#[derive(Debug, Clone)]
pub struct ParamSet<T = f64> {
    tag: u64,
    params: Vec<Param<T>>,
}

impl<T: Scalar> PartialEq for ParamSet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tag: NEXT_SET_TAG.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar coordinates.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    SumAxis { x: Var, axis: usize },
    SumAll(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    MaxAxis { x: Var, axis: usize, argmax: Vec<usize> },
    Reshape(Var),
    L2Norm(Var),
    GroupedLinear { x: Var, w: Var },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation. Single-threaded by construction.
#[derive(Debug, Default)]
pub struct Graph<T = f64> {
    nodes: Vec<Node<T>>,
    params: Vec<(u64, ParamId, Var)>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T = f64> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(u64, ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to an arbitrary node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// One gradient per parameter of `set`, in id order. Parameters that
    /// appear several times on the graph accumulate; unreached ones are zero.
    pub fn for_params(&self, set: &ParamSet<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = set.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
        for &(tag, id, var) in &self.params {
            if tag != set.tag {
                continue;
            }
            if let Some(g) = &self.grads[var.0] {
                out[id.0]
                    .add_assign(g)
                    .expect("gradient shape equals value shape");
            }
        }
        out
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(shape_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Leaf bound to a parameter; its gradient is reported by [`Gradients::for_params`].
    pub fn param(&mut self, set: &ParamSet<T>, id: ParamId) -> Result<Var> {
        let v = self.push(set.get(id).clone(), Op::Leaf, set.name(id))?;
        self.params.push((set.tag, id, v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose2()?;
        self.push(out, Op::Transpose(x), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), "scale")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v + s);
        self.push(out, Op::AddScalar(x), "add_scalar")
    }

    /// `x[n×c] + b[c]`, the bias term of an affine layer.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = xv.dims2()?;
        let bv = self.value(b);
        if bv.shape() != [c] {
            return Err(shape_err!("add_row: {:?} + {:?}", xv.shape(), bv.shape()));
        }
        let mut data = xv.data().to_vec();
        for i in 0..n {
            for (o, &bj) in data[i * c..(i + 1) * c].iter_mut().zip(bv.data()) {
                *o += bj;
            }
        }
        let out = Tensor::new([n, c], data)?;
        self.push(out, Op::AddRow(x, b), "add_row")
    }

    /// Scales row `i` of `x[n×c]` by `s[i]`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = xv.dims2()?;
        let sv = self.value(s);
        if sv.shape() != [n] {
            return Err(shape_err!("mul_col: {:?} * {:?}", xv.shape(), sv.shape()));
        }
        let mut data = xv.data().to_vec();
        for (i, &si) in sv.data().iter().enumerate() {
            for o in &mut data[i * c..(i + 1) * c] {
                *o *= si;
            }
        }
        let out = Tensor::new([n, c], data)?;
        self.push(out, Op::MulCol(x, s), "mul_col")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(T::tanh);
        self.push(out, Op::Tanh(x), "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| v.max(T::zero()) + (-v.abs()).exp().ln_1p());
        self.push(out, Op::Softplus(x), "softplus")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(T::exp);
        self.push(out, Op::Exp(x), "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let out = xv.map(T::ln);
        self.push(out, Op::Log(x), "log")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = softmax_axis(self.value(x), axis)?;
        self.push(out, Op::Softmax { x, axis }, "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, n, inner) = split_axis(xv.shape(), axis)?;
        let src = xv.data();
        let mut data = src.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let mx = (0..n).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
                let lse = mx + (0..n).map(|k| (src[at(k)] - mx).exp()).sum::<T>().ln();
                for k in 0..n {
                    data[at(k)] = src[at(k)] - lse;
                }
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::LogSoftmax { x, axis }, "log_softmax")
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, n, inner) = split_axis(xv.shape(), axis)?;
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += xv.data()[o * n * inner + k * inner + i];
                }
            }
        }
        let out = Tensor::new(reduced_shape(xv.shape(), axis), data)?;
        self.push(out, Op::SumAxis { x, axis }, "sum_axis")
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| shape_err!("axis {axis} out of range"))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, T::one() / T::from_usize_lossy(n))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::from_usize_lossy(n))
    }

    /// Sum of squared entries.
    pub fn squared_l2(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        self.sum(sq)
    }

    /// Euclidean norm; the gradient at the origin is taken as zero.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).data().iter().map(|&v| v * v).sum::<T>().sqrt();
        self.push(Tensor::scalar(n), Op::L2Norm(x), "l2_norm")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = split_axis(&base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(shape_err!("concat: {:?} vs {:?}", s, base));
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let n = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            "concat",
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, n, inner) = split_axis(xv.shape(), axis)?;
        if start + len > n || len == 0 {
            return Err(shape_err!("slice {start}..{} of extent {n}", start + len));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Slice { x, axis, start }, "slice")
    }

    /// Maximum along `axis` together with the argmax indices (lowest index wins ties).
    /// The gradient flows only to the argmax element.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        let xv = self.value(x);
        let (outer, n, inner) = split_axis(xv.shape(), axis)?;
        let mut vals = Vec::with_capacity(outer * inner);
        let mut idx = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| xv.data()[o * n * inner + k * inner + i];
                let mut best = 0;
                for k in 1..n {
                    if at(k) > at(best) {
                        best = k;
                    }
                }
                vals.push(at(best));
                idx.push(best);
            }
        }
        let out = Tensor::new(reduced_shape(xv.shape(), axis), vals)?;
        let v = self.push(
            out,
            Op::MaxAxis {
                x,
                axis,
                argmax: idx.clone(),
            },
            "max_axis",
        )?;
        Ok((v, idx))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// Block-diagonal linear map: row `i` of `x[n×in]` is multiplied by
    /// `w[i mod g]`, where `w` has shape `[g, in, out]`. Equivalent to a
    /// kernel-width-1 grouped convolution with `g` groups and no weight
    /// sharing across groups.
    pub fn grouped_linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, din) = xv.dims2()?;
        let (g, win, dout) = match wv.shape()[..] {
            [g, a, b] => (g, a, b),
            _ => return Err(shape_err!("grouped weights must be rank 3, got {:?}", wv.shape())),
        };
        if win != din {
            return Err(shape_err!("grouped_linear: input width {din} vs weight {win}"));
        }
        if n % g != 0 {
            return Err(shape_err!("group-count mismatch: {n} rows cannot form groups of {g}"));
        }
        let mut data = vec![T::zero(); n * dout];
        for row in 0..n {
            let grp = row % g;
            let wblock = &wv.data()[grp * din * dout..(grp + 1) * din * dout];
            matmul_into(
                &xv.data()[row * din..(row + 1) * din],
                wblock,
                &mut data[row * dout..(row + 1) * dout],
                1,
                din,
                dout,
            );
        }
        let out = Tensor::new([n, dout], data)?;
        self.push(out, Op::GroupedLinear { x, w }, "grouped_linear")
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(shape_err!("backward root must be scalar, got {:?}", rv.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(rv.shape().to_vec(), T::one())?);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, d: Tensor<T>| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => {
                    *slot = Some(d);
                    Ok(())
                }
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, g.matmul(&bv.transpose2()?)?)?;
                acc(*b, av.transpose2()?.matmul(g)?)?;
            }
            Op::Transpose(x) => acc(*x, g.transpose2()?)?,
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, g.zip_map(bv, |gi, bi| gi * bi)?)?;
                acc(*b, g.zip_map(av, |gi, ai| gi * ai)?)?;
            }
            Op::Scale(x, s) => {
                let s = *s;
                acc(*x, g.map(|v| v * s))?;
            }
            Op::AddScalar(x) => acc(*x, g.clone())?,
            Op::AddRow(x, b) => {
                acc(*x, g.clone())?;
                let (n, c) = g.dims2()?;
                let mut db = vec![T::zero(); c];
                for i in 0..n {
                    for (d, &gv) in db.iter_mut().zip(&g.data()[i * c..(i + 1) * c]) {
                        *d += gv;
                    }
                }
                acc(*b, Tensor::new([c], db)?)?;
            }
            Op::MulCol(x, s) => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let (n, c) = xv.dims2()?;
                let mut dx = g.data().to_vec();
                let mut ds = vec![T::zero(); n];
                for i in 0..n {
                    let si = sv.data()[i];
                    for j in 0..c {
                        let k = i * c + j;
                        ds[i] += g.data()[k] * xv.data()[k];
                        dx[k] = g.data()[k] * si;
                    }
                }
                acc(*x, Tensor::new([n, c], dx)?)?;
                acc(*s, Tensor::new([n], ds)?)?;
            }
            Op::Tanh(x) => acc(*x, g.zip_map(y, |gi, yi| gi * (T::one() - yi * yi))?)?,
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(
                    *x,
                    g.zip_map(xv, |gi, xi| if xi > T::zero() { gi } else { T::zero() })?,
                )?;
            }
            Op::Sigmoid(x) => acc(*x, g.zip_map(y, |gi, yi| gi * yi * (T::one() - yi))?)?,
            Op::Softplus(x) => acc(*x, g.zip_map(self.value(*x), |gi, xi| gi * sigmoid(xi))?)?,
            Op::Exp(x) => acc(*x, g.zip_map(y, |gi, yi| gi * yi)?)?,
            Op::Log(x) => acc(*x, g.zip_map(self.value(*x), |gi, xi| gi / xi)?)?,
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(y.shape(), *axis)?;
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * n * inner + k * inner + i;
                        let dot: T = (0..n).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                        for k in 0..n {
                            dx[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                        }
                    }
                }
                acc(*x, Tensor::new(y.shape().to_vec(), dx)?)?;
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, n, inner) = split_axis(y.shape(), *axis)?;
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * n * inner + k * inner + i;
                        let gs: T = (0..n).map(|k| g.data()[at(k)]).sum();
                        for k in 0..n {
                            dx[at(k)] = g.data()[at(k)] - y.data()[at(k)].exp() * gs;
                        }
                    }
                }
                acc(*x, Tensor::new(y.shape().to_vec(), dx)?)?;
            }
            Op::SumAxis { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis)?;
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            dx[o * n * inner + k * inner + i] = g.data()[o * inner + i];
                        }
                    }
                }
                acc(*x, Tensor::new(shape, dx)?)?;
            }
            Op::SumAll(x) => {
                let gv = g.item()?;
                acc(*x, Tensor::full(self.shape(*x).to_vec(), gv)?)?;
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(y.shape(), *axis)?;
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis];
                    let mut d = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        d.extend_from_slice(&g.data()[base..base + n * inner]);
                    }
                    acc(p, Tensor::new(self.shape(p).to_vec(), d)?)?;
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis)?;
                let len = y.shape()[*axis];
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, Tensor::new(shape, dx)?)?;
            }
            Op::MaxAxis { x, axis, argmax } => {
                let shape = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis)?;
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = argmax[o * inner + i];
                        dx[o * n * inner + k * inner + i] = g.data()[o * inner + i];
                    }
                }
                acc(*x, Tensor::new(shape, dx)?)?;
            }
            Op::Reshape(x) => acc(*x, g.reshape(self.shape(*x).to_vec())?)?,
            Op::L2Norm(x) => {
                let n = y.item()?;
                let gv = g.item()?;
                let xv = self.value(*x);
                let d = if n > T::zero() {
                    xv.map(|v| gv * v / n)
                } else {
                    Tensor::zeros_like(xv)
                };
                acc(*x, d)?;
            }
            Op::GroupedLinear { x, w } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, din) = xv.dims2()?;
                let (grp_n, dout) = (wv.shape()[0], wv.shape()[2]);
                let mut dx = vec![T::zero(); n * din];
                let mut dw = vec![T::zero(); wv.len()];
                for row in 0..n {
                    let grp = row % grp_n;
                    let wblock = &wv.data()[grp * din * dout..(grp + 1) * din * dout];
                    let grow = &g.data()[row * dout..(row + 1) * dout];
                    let xrow = &xv.data()[row * din..(row + 1) * din];
                    for p in 0..din {
                        let wrow = &wblock[p * dout..(p + 1) * dout];
                        dx[row * din + p] = wrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                        let dwrow = &mut dw[grp * din * dout + p * dout..grp * din * dout + (p + 1) * dout];
                        for (d, &gv) in dwrow.iter_mut().zip(grow) {
                            *d += xrow[p] * gv;
                        }
                    }
                }
                acc(*x, Tensor::new([n, din], dx)?)?;
                acc(*w, Tensor::new(wv.shape().to_vec(), dw)?)?;
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax along `axis` outside of any graph.
pub fn softmax_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    x.ensure_finite("softmax input")?;
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    let src = x.data();
    let mut data = src.to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let mx = (0..n).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..n {
                let e = (src[at(k)] - mx).exp();
                data[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                data[at(k)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}
