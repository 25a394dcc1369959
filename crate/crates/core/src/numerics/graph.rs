//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParameterStore`] rather than copied; calling
//! [`Graph::backward`] on a `1 × 1` result returns one gradient per stored
//! parameter (zeros for parameters the pass never touched).
//!
//! The primitive set is closed: matmul, transpose, concat/slice/reshape,
//! broadcasting `+ − ∘`, an affine scalar map, `tanh`, `sigmoid`, `relu`,
//! `exp`, masked softmax, layer norm, masked max/mean pooling, segment max,
//! row gather, summation and a fused softmax cross-entropy. Every model
//! component is composed from these, so checking each primitive against
//! finite differences covers the whole model.

use std::ops::Range;

use super::{gemm, Gradients, ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(usize),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Slice { x: Var, r0: usize, c0: usize },
    Reshape(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Pick { x: Var, src: Vec<Option<usize>> },
    MaskedMean { x: Var, axis: usize, weight: Vec<f64> },
    Sum(Var),
    SoftmaxXent { x: Var, probs: Vec<f64>, label: usize },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Records a forward pass for later differentiation.
pub struct Graph<'p> {
    store: Option<&'p ParameterStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn broadcast(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let pick = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (pick(a.0, b.0), pick(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

#[inline]
fn bidx(shape: (usize, usize), i: usize, j: usize) -> usize {
    let r = if shape.0 == 1 { 0 } else { i };
    let c = if shape.1 == 1 { 0 } else { j };
    r * shape.1 + c
}

fn check_mask(op: &'static str, x: &Tensor, mask: &[bool]) -> Result<()> {
    if mask.len() != x.len() {
        return Err(Error::shape(
            op,
            format!("mask has {} entries for a {:?} tensor", mask.len(), x.shape()),
        ));
    }
    Ok(())
}

fn check_axis(op: &'static str, axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::shape(op, format!("axis {axis} (only 0 and 1 exist)")));
    }
    Ok(())
}

/// Index lists of the slices reduced along `axis` of an `r × c` matrix.
/// Axis 0 runs down each column, axis 1 along each row.
fn slices(r: usize, c: usize, axis: usize) -> Vec<Vec<usize>> {
    if axis == 1 {
        (0..r).map(|i| (0..c).map(|j| i * c + j).collect()).collect()
    } else {
        (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect()
    }
}

/// Numerically stable softmax over `idx` restricted to `mask`. Masked
/// entries, and all entries of an empty slice, are exactly zero.
fn softmax_slice(x: &[f64], mask: &[bool], idx: &[usize], out: &mut [f64]) -> bool {
    let mut max = f64::NEG_INFINITY;
    for &k in idx {
        if mask[k] && x[k] > max {
            max = x[k];
        }
    }
    if max == f64::NEG_INFINITY {
        for &k in idx {
            out[k] = 0.0;
        }
        return false;
    }
    let mut total = 0.0;
    for &k in idx {
        if mask[k] {
            let e = (x[k] - max).exp();
            out[k] = e;
            total += e;
        } else {
            out[k] = 0.0;
        }
    }
    for &k in idx {
        out[k] /= total;
    }
    true
}

/// Plain masked softmax on a tensor, outside any graph.
pub fn masked_softmax(logits: &Tensor, mask: &[bool], axis: usize, strict: bool) -> Result<Tensor> {
    check_mask("masked_softmax", logits, mask)?;
    check_axis("masked_softmax", axis)?;
    let (r, c) = dims(logits);
    let mut out = vec![0.0; logits.len()];
    for idx in slices(r, c, axis) {
        if !softmax_slice(logits.data(), mask, &idx, &mut out) && strict {
            return Err(Error::EmptySupport("masked_softmax"));
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Layer normalisation of each row of `x`, outside any graph.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let (x, gain, bias) = (g.constant(x.clone()), g.constant(gain.clone()), g.constant(bias.clone()));
    let y = g.layer_norm(x, gain, bias, eps)?;
    Ok(g.value(y).clone())
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph with no parameter store; only constants can be used.
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_store(store: &'p ParameterStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> Option<&'p ParameterStore> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param node without store").by_id(*id),
        }
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        dims(self.value(v))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// The node for a stored parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let id = store
            .id(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if let Some(v) = self.param_vars[id] {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} · {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        gemm(self.value(a).data(), false, self.value(b).data(), false, n, k, m, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(t, Op::Transpose(a), ng)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (sa, sb) = (self.dims(a), self.dims(b));
        let (r, c) = broadcast(name, sa, sb)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data = if sa == sb {
            av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let mut d = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    d.push(f(av[bidx(sa, i, j)], bv[bidx(sb, i, j)]));
                }
            }
            d
        };
        Ok((Tensor::matrix(r, c, data), self.ng(a) || self.ng(b)))
    }

    /// Elementwise sum with row/column/scalar broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Affine(x, scale), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|v| self.dims(*v).1)
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(Error::shape("concat_rows", format!("{} cols vs {c}", t.cols())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Tensor::matrix(rows, c, data), Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Join matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|v| self.dims(*v).0)
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(Error::shape("concat_cols", format!("{pr} rows vs {r}")));
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Tensor::matrix(r, cols, data), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice(&mut self, x: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if rows.end > r || cols.end > c || rows.start > rows.end || cols.start > cols.end {
            return Err(Error::shape("slice", format!("{rows:?},{cols:?} of {r}x{c}")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            data.extend_from_slice(&t.row(i)[cols.clone()]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(rows.len(), cols.len(), data),
            Op::Slice { x, r0: rows.start, c0: cols.start },
            ng,
        ))
    }

    pub fn rows(&mut self, x: Var, rows: Range<usize>) -> Result<Var> {
        let c = self.dims(x).1;
        self.slice(x, rows, 0..c)
    }

    pub fn reshape(&mut self, x: Var, r: usize, c: usize) -> Result<Var> {
        let t = self.value(x).clone().reshaped(&[r, c])?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Softmax along `axis` (0: down columns, 1: along rows) over unmasked
    /// entries. Masked entries are exactly 0. A slice with no unmasked
    /// entry is all zeros, or an [`Error::EmptySupport`] when `strict`.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool], axis: usize, strict: bool) -> Result<Var> {
        let out = masked_softmax(self.value(x), mask, axis, strict)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax { x, axis }, ng))
    }

    /// Normalise each row to zero mean and unit (population) variance, then
    /// apply `gain ∘ · + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gain) != (1, c) || self.dims(bias) != (1, c) {
            return Err(Error::shape(
                "layer_norm",
                format!("gain {:?} / bias {:?} for width {c}", self.dims(gain), self.dims(bias)),
            ));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
            ng,
        ))
    }

    /// Max over unmasked entries along `axis`; slices without support give 0.
    pub fn masked_max(&mut self, x: Var, mask: &[bool], axis: usize) -> Result<Var> {
        check_axis("masked_max", axis)?;
        let t = self.value(x);
        check_mask("masked_max", t, mask)?;
        let (r, c) = dims(t);
        let mut src = Vec::new();
        let mut out = Vec::new();
        for idx in slices(r, c, axis) {
            let best = idx
                .iter()
                .copied()
                .filter(|&k| mask[k])
                .fold(None, |acc: Option<usize>, k| match acc {
                    Some(b) if t.data()[b] >= t.data()[k] => Some(b),
                    _ => Some(k),
                });
            out.push(best.map_or(0.0, |k| t.data()[k]));
            src.push(best);
        }
        let shape = if axis == 0 { (1, c) } else { (r, 1) };
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(shape.0, shape.1, out), Op::Pick { x, src }, ng))
    }

    /// Mean over unmasked entries along `axis`; slices without support give 0.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool], axis: usize) -> Result<Var> {
        check_axis("masked_mean", axis)?;
        let t = self.value(x);
        check_mask("masked_mean", t, mask)?;
        let (r, c) = dims(t);
        let mut weight = vec![0.0; t.len()];
        let mut out = Vec::new();
        for idx in slices(r, c, axis) {
            let n = idx.iter().filter(|&&k| mask[k]).count();
            let mut s = 0.0;
            if n > 0 {
                for &k in idx.iter().filter(|&&k| mask[k]) {
                    weight[k] = 1.0 / n as f64;
                    s += t.data()[k];
                }
                s /= n as f64;
            }
            out.push(s);
        }
        let shape = if axis == 0 { (1, c) } else { (r, 1) };
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(shape.0, shape.1, out),
            Op::MaskedMean { x, axis, weight },
            ng,
        ))
    }

    /// Rows of `x` selected by index; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, idx: &[Option<usize>]) -> Result<Var> {
        let (r, c) = self.dims(x);
        let mut src = Vec::with_capacity(idx.len() * c);
        let mut out = Vec::with_capacity(idx.len() * c);
        let t = self.value(x);
        for i in idx {
            match *i {
                Some(i) if i < r => {
                    for j in 0..c {
                        src.push(Some(i * c + j));
                    }
                    out.extend_from_slice(t.row(i));
                }
                Some(i) => return Err(Error::IdOutOfRange { id: i, size: r }),
                None => {
                    src.extend(std::iter::repeat_n(None, c));
                    out.extend(std::iter::repeat_n(0.0, c));
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(idx.len(), c, out), Op::Pick { x, src }, ng))
    }

    /// Column-wise max over each contiguous row segment; one output row per
    /// segment. Empty segments give a zero row.
    pub fn segment_max(&mut self, x: Var, segments: &[Range<usize>]) -> Result<Var> {
        let (r, c) = self.dims(x);
        let t = self.value(x);
        let mut src = Vec::with_capacity(segments.len() * c);
        let mut out = Vec::with_capacity(segments.len() * c);
        for seg in segments {
            if seg.end > r {
                return Err(Error::shape("segment_max", format!("segment {seg:?} of {r} rows")));
            }
            for j in 0..c {
                let mut best: Option<usize> = None;
                for i in seg.clone() {
                    let k = i * c + j;
                    if best.is_none_or(|b| t.data()[k] > t.data()[b]) {
                        best = Some(k);
                    }
                }
                out.push(best.map_or(0.0, |k| t.data()[k]));
                src.push(best);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(segments.len(), c, out), Op::Pick { x, src }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// `−log softmax(x)[label]` for a single row of logits.
    pub fn softmax_cross_entropy(&mut self, x: Var, label: usize) -> Result<Var> {
        let t = self.value(x);
        let n = t.len();
        if label >= n {
            return Err(Error::LabelOutOfRange { label, n });
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("softmax_cross_entropy logits".into()));
        }
        let mask = vec![true; n];
        let probs = masked_softmax(&Tensor::row_vector(t.data().to_vec()), &mask, 1, true)?
            .into_data();
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - t.data()[label];
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxXent { x, probs, label }, ng))
    }

    /// Reverse sweep from a `1 × 1` node. Returns gradients for every stored
    /// parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Value::Param(_) = node.value {
                grads[i] = Some(g);
                continue;
            }
            let y = self.value(Var(i));
            self.propagate(&node.op, y, &g, &mut grads);
        }

        let mut out = Gradients::default();
        if let Some(store) = self.store {
            for id in 0..store.len() {
                let t = match self.param_vars[id].and_then(|v| grads[v.0].take()) {
                    Some(g) => Tensor::new(store.by_id(id).shape().to_vec(), g)?,
                    None => Tensor::zeros(store.by_id(id).shape()),
                };
                out.insert(store.name(id), t);
            }
        }
        Ok(out)
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.ng(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn broadcast_back(&self, grads: &mut [Option<Vec<f64>>], v: Var, out: (usize, usize), g: &[f64], factor: impl Fn(usize) -> f64) {
        let s = self.dims(v);
        if let Some(ga) = self.acc(grads, v) {
            if s == out {
                for k in 0..g.len() {
                    ga[k] += g[k] * factor(k);
                }
            } else {
                for i in 0..out.0 {
                    for j in 0..out.1 {
                        let k = i * out.1 + j;
                        ga[bidx(s, i, j)] += g[k] * factor(k);
                    }
                }
            }
        }
    }

    fn propagate(&self, op: &Op, y: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(*a);
                let m = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(g, false, bv, true, n, m, k, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(av, true, g, false, k, n, m, gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                let out = dims(y);
                self.broadcast_back(grads, *a, out, g, |_| 1.0);
                self.broadcast_back(grads, *b, out, g, |_| 1.0);
            }
            Op::Sub(a, b) => {
                let out = dims(y);
                self.broadcast_back(grads, *a, out, g, |_| 1.0);
                self.broadcast_back(grads, *b, out, g, |_| -1.0);
            }
            Op::Mul(a, b) => {
                let out = dims(y);
                let (sa, sb) = (self.dims(*a), self.dims(*b));
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let c = out.1;
                self.broadcast_back(grads, *a, out, g, |k| bv[bidx(sb, k / c, k % c)]);
                self.broadcast_back(grads, *b, out, g, |k| av[bidx(sa, k / c, k % c)]);
            }
            Op::Affine(x, s) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for k in 0..g.len() {
                        gx[k] += s * g[k];
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, yv) in y.data().iter().enumerate() {
                        gx[k] += g[k] * (1.0 - yv * yv);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, yv) in y.data().iter().enumerate() {
                        gx[k] += g[k] * yv * (1.0 - yv);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, yv) in y.data().iter().enumerate() {
                        if *yv > 0.0 {
                            gx[k] += g[k];
                        }
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, yv) in y.data().iter().enumerate() {
                        gx[k] += g[k] * yv;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if let Some(gp) = self.acc(grads, *p) {
                        for k in 0..n {
                            gp[k] += g[off + k];
                        }
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, cols) = dims(y);
                let mut off = 0;
                for p in parts {
                    let pc = self.dims(*p).1;
                    if let Some(gp) = self.acc(grads, *p) {
                        for i in 0..r {
                            for j in 0..pc {
                                gp[i * pc + j] += g[i * cols + off + j];
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::Slice { x, r0, c0 } => {
                let (r, c) = dims(y);
                let xc = self.dims(*x).1;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[(r0 + i) * xc + c0 + j] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for k in 0..g.len() {
                        gx[k] += g[k];
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (r, c) = dims(y);
                let yv = y.data();
                if let Some(gx) = self.acc(grads, *x) {
                    for idx in slices(r, c, *axis) {
                        let dot: f64 = idx.iter().map(|&k| g[k] * yv[k]).sum();
                        for &k in &idx {
                            gx[k] += yv[k] * (g[k] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (r, c) = dims(y);
                let gv = self.value(*gain).data().to_vec();
                if let Some(gg) = self.acc(grads, *gain) {
                    for k in 0..g.len() {
                        gg[k % c] += g[k] * xhat[k];
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for k in 0..g.len() {
                        gb[k % c] += g[k];
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let cf = c as f64;
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dh: Vec<f64> = row.clone().map(|k| g[k] * gv[k % c]).collect();
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(&xhat[row.clone()]).map(|(a, b)| a * b).sum();
                        for (j, k) in row.enumerate() {
                            gx[k] += inv_std[i] / cf * (cf * dh[j] - s1 - xhat[k] * s2);
                        }
                    }
                }
            }
            Op::Pick { x, src } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, s) in src.iter().enumerate() {
                        if let Some(s) = s {
                            gx[*s] += g[k];
                        }
                    }
                }
            }
            Op::MaskedMean { x, axis, weight } => {
                let (r, c) = self.dims(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            let k = i * c + j;
                            let o = if *axis == 0 { j } else { i };
                            gx[k] += weight[k] * g[o];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::SoftmaxXent { x, probs, label } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, p) in probs.iter().enumerate() {
                        let t = if k == *label { 1.0 } else { 0.0 };
                        gx[k] += g[0] * (p - t);
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let y = masked_softmax(&Tensor::row_vector(vec![0.0; 3]), &[true; 3], 1, true).unwrap();
        for v in y.data() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_masked_entry_is_exact_zero() {
        let y = masked_softmax(
            &Tensor::row_vector(vec![1.0, 2.0, 3.0]),
            &[true, true, false],
            1,
            true,
        )
        .unwrap();
        let e = std::f64::consts::E;
        assert!(close(y.data()[0], 1.0 / (1.0 + e), 1e-12));
        assert!(close(y.data()[1], e / (1.0 + e), 1e-12));
        assert_eq!(y.data()[2], 0.0);
        assert!(close(y.data()[0], 0.26894, 1e-5));
        assert!(close(y.data()[1], 0.73106, 1e-5));
    }

    #[test]
    fn softmax_empty_support() {
        let x = Tensor::row_vector(vec![0.0; 3]);
        assert!(matches!(
            masked_softmax(&x, &[false; 3], 1, true),
            Err(Error::EmptySupport(_))
        ));
        let y = masked_softmax(&x, &[false; 3], 1, false).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn softmax_axis_zero_normalises_columns() {
        let x = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 3.0]);
        let y = masked_softmax(&x, &[true; 4], 0, true).unwrap();
        assert!(close(y.at(0, 0) + y.at(1, 0), 1.0, 1e-15));
        assert!(close(y.at(0, 1) + y.at(1, 1), 1.0, 1e-15));
        assert!(close(y.at(0, 0), 0.5, 1e-15));
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::row_vector(vec![1.0; 3]);
        let zero = Tensor::row_vector(vec![0.0; 3]);
        let y = layer_norm(&Tensor::row_vector(vec![5.0; 3]), &one, &zero, 1e-6).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));

        let y = layer_norm(
            &Tensor::row_vector(vec![1.0, 3.0]),
            &Tensor::row_vector(vec![1.0; 2]),
            &Tensor::row_vector(vec![0.0; 2]),
            1e-12,
        )
        .unwrap();
        assert!(close(y.data()[0], -1.0, 1e-9) && close(y.data()[1], 1.0, 1e-9));

        let y = layer_norm(
            &Tensor::row_vector(vec![1.0, -4.0, 9.0]),
            &zero,
            &Tensor::row_vector(vec![7.0; 3]),
            1e-6,
        )
        .unwrap();
        assert!(y.data().iter().all(|v| *v == 7.0));

        assert!(layer_norm(&Tensor::row_vector(vec![1.0, 2.0]), &one, &zero, 1e-6).is_err());
    }

    #[test]
    fn broadcasting_shapes() {
        let mut g = Graph::new();
        let m = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let r = g.constant(Tensor::row_vector(vec![10.0, 20.0, 30.0]));
        let s = g.constant(Tensor::scalar(2.0));
        let a = g.add(m, r).unwrap();
        assert_eq!(g.value(a).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let b = g.mul(s, m).unwrap();
        assert_eq!(g.value(b).data(), &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        let bad = g.constant(Tensor::row_vector(vec![1.0, 2.0]));
        assert!(g.add(m, bad).is_err());
    }

    #[test]
    fn masked_max_and_mean() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 3, vec![1.0, 9.0, 3.0, 4.0, -5.0, 6.0]));
        let mask = [true, false, true, true, true, false];
        let mx = g.masked_max(x, &mask, 1).unwrap();
        assert_eq!(g.value(mx).data(), &[3.0, 4.0]);
        let mn = g.masked_mean(x, &mask, 0).unwrap();
        assert_eq!(g.value(mn).data(), &[2.5, -5.0, 3.0]);
        let none = g.masked_max(x, &[false; 6], 0).unwrap();
        assert_eq!(g.value(none).data(), &[0.0; 3]);
    }

    #[test]
    fn gather_and_segment_max() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 0.0, -1.0, 5.0]));
        let y = g.gather_rows(x, &[Some(2), None, Some(0)]).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, 5.0, 0.0, 0.0, 1.0, 2.0]);
        assert!(g.gather_rows(x, &[Some(3)]).is_err());
        let s = g.segment_max(x, &[0..2, 2..3]).unwrap();
        assert_eq!(g.value(s).data(), &[3.0, 2.0, -1.0, 5.0]);
    }

    #[test]
    fn cross_entropy_value() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row_vector(vec![0.0; 20]));
        let l = g.softmax_cross_entropy(x, 7).unwrap();
        assert!(close(g.value(l).item(), 20f64.ln(), 1e-12));
        assert!(g.softmax_cross_entropy(x, 20).is_err());
    }

    #[test]
    fn backward_square_and_unused_param() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::scalar(3.0)).unwrap();
        store.insert("unused", Tensor::row_vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::with_store(&store);
        let w = g.param("w").unwrap();
        let y = g.mul(w, w).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get("w").unwrap().item(), 6.0);
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
        assert!(g.param("missing").is_err());
    }
}
