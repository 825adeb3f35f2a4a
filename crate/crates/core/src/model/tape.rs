//! Reverse-mode differentiation over a linear tape.
//!
//! Every op records its inputs and output value; [`Tape::backward`] walks
//! the tape once in reverse and applies the hand-written adjoint of each
//! op. ID-embedding lookups produce sparse row gradients.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter {0}")]
    Unknown(String),
    #[error("parameter {name}: expected shape {expected:?}, got {got:?}")]
    Shape { name: String, expected: (usize, usize), got: (usize, usize) },
    #[error("gradient sets disagree: {0}")]
    Mismatch(String),
}

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

pub type ParamId = usize;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        self.names.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Replaces a tensor after checking its shape.
    pub fn assign(&mut self, name: &str, tensor: Tensor) -> Result<(), ParamError> {
        let id = self.id(name).ok_or_else(|| ParamError::Unknown(name.to_string()))?;
        let expected = self.tensors[id].shape();
        if tensor.shape() != expected {
            return Err(ParamError::Shape { name: name.to_string(), expected, got: tensor.shape() });
        }
        self.tensors[id] = tensor;
        Ok(())
    }

    /// Plain SGD step.
    pub fn apply(&mut self, grads: &Gradients, lr: f64) {
        assert_eq!(grads.grads.len(), self.len(), "gradient count");
        for (t, g) in self.tensors.iter_mut().zip(&grads.grads) {
            match g {
                ParamGrad::Zero => {}
                ParamGrad::Dense(d) => {
                    for (x, dx) in t.data.iter_mut().zip(&d.data) {
                        *x -= lr * dx;
                    }
                }
                ParamGrad::SparseRows(rows) => {
                    for (r, dr) in rows {
                        for (x, dx) in t.row_mut(*r).iter_mut().zip(dr) {
                            *x -= lr * dx;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Zero,
    Dense(Tensor),
    /// Row index → gradient of that row.
    SparseRows(BTreeMap<usize, Vec<f64>>),
}

impl ParamGrad {
    pub fn to_dense(&self, shape: (usize, usize)) -> Tensor {
        match self {
            ParamGrad::Zero => Tensor::zeros(shape.0, shape.1),
            ParamGrad::Dense(t) => t.clone(),
            ParamGrad::SparseRows(rows) => {
                let mut t = Tensor::zeros(shape.0, shape.1);
                for (r, v) in rows {
                    t.row_mut(*r).copy_from_slice(v);
                }
                t
            }
        }
    }
}

/// One gradient per parameter of a [`ParamStore`], aligned by id.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub grads: Vec<ParamGrad>,
}

impl Gradients {
    pub fn zeros(count: usize) -> Self {
        Self { grads: vec![ParamGrad::Zero; count] }
    }

    pub fn get(&self, id: ParamId) -> &ParamGrad {
        &self.grads[id]
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| match g {
                ParamGrad::Zero => 0.0,
                ParamGrad::Dense(t) => t.dot(t),
                ParamGrad::SparseRows(rows) => rows.values().flatten().map(|x| x * x).sum(),
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Gradients, s: f64, params: &ParamStore) -> Result<(), ParamError> {
        if other.grads.len() != self.grads.len() {
            return Err(ParamError::Mismatch(format!("{} vs {} tensors", self.grads.len(), other.grads.len())));
        }
        for (id, (a, b)) in self.grads.iter_mut().zip(&other.grads).enumerate() {
            let shape = params.get(id).shape();
            if let ParamGrad::Dense(t) = b {
                if t.shape() != shape {
                    return Err(ParamError::Shape { name: params.name(id).to_string(), expected: shape, got: t.shape() });
                }
            }
            match (a, b) {
                (_, ParamGrad::Zero) => {}
                (a @ ParamGrad::Zero, b) => {
                    *a = b.clone();
                    scale_grad(a, s);
                }
                (ParamGrad::SparseRows(x), ParamGrad::SparseRows(y)) => {
                    for (r, v) in y {
                        let row = x.entry(*r).or_insert_with(|| vec![0.0; v.len()]);
                        for (p, q) in row.iter_mut().zip(v) {
                            *p += s * q;
                        }
                    }
                }
                (a, b) => {
                    let mut dense = a.to_dense(shape);
                    let other = b.to_dense(shape);
                    for (p, q) in dense.data.iter_mut().zip(&other.data) {
                        *p += s * q;
                    }
                    *a = ParamGrad::Dense(dense);
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().for_each(|g| scale_grad(g, s));
    }
}

fn scale_grad(g: &mut ParamGrad, s: f64) {
    match g {
        ParamGrad::Zero => {}
        ParamGrad::Dense(t) => t.scale_assign(s),
        ParamGrad::SparseRows(rows) => rows.values_mut().flatten().for_each(|x| *x *= s),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(ParamId),
    ParamRow(ParamId, usize),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcastCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    VStack(Vec<Var>),
    HStack(Vec<Var>),
    SliceRows(Var, usize),
    Col(Var, usize),
    MaskedSoftmaxRows(Var, Vec<bool>),
    Sum(Var),
    Cosine(Var, Var),
    BceWithLogits(Var, f64),
    SoftmaxXent(Var, Vec<usize>),
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    ops: Vec<Op>,
    values: Vec<Tensor>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, ops: Vec::new(), values: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = &self.values[v.0];
        assert_eq!(t.len(), 1, "not a scalar");
        t.data[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    /// A parameter; repeated uses share one tape entry.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let v = self.push(Op::Param(id), self.params.get(id).clone());
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    /// Row `row` of a parameter matrix as a column vector.
    pub fn param_row(&mut self, id: ParamId, row: usize) -> Var {
        let value = Tensor::column(self.params.get(id).row(row).to_vec());
        self.push(Op::ParamRow(id, row), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    /// Adds the column vector `b` to every column of `a`.
    pub fn add_broadcast_col(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((bv.rows, bv.cols), (av.rows, 1), "bias shape");
        let mut v = av.clone();
        for r in 0..v.rows {
            let bias = bv.data[r];
            v.row_mut(r).iter_mut().for_each(|x| *x += bias);
        }
        self.push(Op::AddBroadcastCol(a, b), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Var {
        let wx = self.matmul(w, x);
        self.add_broadcast_col(wx, b)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Op::VStack(parts.to_vec()), Tensor::from_vec(rows, cols, data))
    }

    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.rows, rows, "hstack row mismatch");
            for r in 0..rows {
                out.row_mut(r)[c0..c0 + t.cols].copy_from_slice(t.row(r));
            }
            c0 += t.cols;
        }
        self.push(Op::HStack(parts.to_vec()), out)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        let v = Tensor::from_vec(end - start, t.cols, t.data[start * t.cols..end * t.cols].to_vec());
        self.push(Op::SliceRows(a, start), v)
    }

    pub fn col(&mut self, a: Var, j: usize) -> Var {
        let v = Tensor::column(self.value(a).col(j));
        self.push(Op::Col(a, j), v)
    }

    /// Row-wise softmax restricted to `mask` (row-major, same shape as
    /// `a`). Masked entries are exactly zero. Every row needs one allowed
    /// entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Vec<bool>) -> Var {
        let t = self.value(a);
        assert_eq!(mask.len(), t.len(), "mask shape");
        let mut out = Tensor::zeros(t.rows, t.cols);
        for r in 0..t.rows {
            let allowed = &mask[r * t.cols..(r + 1) * t.cols];
            let row = t.row(r);
            let max = row
                .iter()
                .zip(allowed)
                .filter(|(_, m)| **m)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY, "softmax row {r} fully masked");
            let mut total = 0.0;
            for c in 0..t.cols {
                if allowed[c] {
                    let e = (row[c] - max).exp();
                    out.set(r, c, e);
                    total += e;
                }
            }
            out.row_mut(r).iter_mut().for_each(|x| *x /= total);
        }
        self.push(Op::MaskedSoftmaxRows(a, mask), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(Op::Sum(a), v)
    }

    /// Cosine similarity of two equally sized tensors, as a scalar. Norms
    /// are clamped below at [`NORM_EPS`], so a zero vector scores 0.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let v = x.dot(y) / (x.norm().max(NORM_EPS) * y.norm().max(NORM_EPS));
        self.push(Op::Cosine(a, b), Tensor::scalar(v))
    }

    /// Binary cross-entropy of a logit against a label in [0, 1].
    pub fn bce_with_logits(&mut self, s: Var, label: f64) -> Var {
        let v = bce_value(self.scalar(s), label);
        self.push(Op::BceWithLogits(s, label), Tensor::scalar(v))
    }

    /// Mean softmax cross-entropy of each logit row against `targets`.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let t = self.value(logits);
        assert_eq!(targets.len(), t.rows, "one target per row");
        let mut loss = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let row = t.row(r);
            loss += log_sum_exp(row) - row[*target];
        }
        let v = Tensor::scalar(loss / t.rows as f64);
        self.push(Op::SoftmaxXent(logits, targets), v)
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "loss must be a scalar");
        let mut adj: Vec<Option<Tensor>> = vec![None; self.values.len()];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut grads = Gradients::zeros(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let out = &self.values[i];
            match &self.ops[i] {
                Op::Const => {}
                Op::Param(id) => grads.grads[*id] = ParamGrad::Dense(g),
                Op::ParamRow(id, row) => {
                    let entry = &mut grads.grads[*id];
                    if let ParamGrad::Zero = entry {
                        *entry = ParamGrad::SparseRows(BTreeMap::new());
                    }
                    if let ParamGrad::SparseRows(rows) = entry {
                        let acc = rows.entry(*row).or_insert_with(|| vec![0.0; g.len()]);
                        for (a, b) in acc.iter_mut().zip(&g.data) {
                            *a += b;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose());
                    let db = self.value(*a).transpose().matmul(&g);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|x| -x));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip(self.value(*b), |x, y| x * y);
                    let db = g.zip(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddBroadcastCol(a, b) => {
                    let db = Tensor::column((0..g.rows).map(|r| g.row(r).iter().sum()).collect());
                    accumulate(&mut adj, *b, db);
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.map(|x| x * s)),
                Op::Tanh(a) => accumulate(&mut adj, *a, g.zip(out, |d, y| d * (1.0 - y * y))),
                Op::VStack(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let rows = self.value(*p).rows;
                        let piece = Tensor::from_vec(rows, g.cols, g.data[r0 * g.cols..(r0 + rows) * g.cols].to_vec());
                        accumulate(&mut adj, *p, piece);
                        r0 += rows;
                    }
                }
                Op::HStack(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        let mut piece = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            piece.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        accumulate(&mut adj, *p, piece);
                        c0 += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut da = Tensor::zeros(src.rows, src.cols);
                    da.data[start * src.cols..start * src.cols + g.len()].copy_from_slice(&g.data);
                    accumulate(&mut adj, *a, da);
                }
                Op::Col(a, j) => {
                    let src = self.value(*a);
                    let mut da = Tensor::zeros(src.rows, src.cols);
                    for r in 0..src.rows {
                        da.set(r, *j, g.data[r]);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::MaskedSoftmaxRows(a, mask) => {
                    let mut da = Tensor::zeros(out.rows, out.cols);
                    for r in 0..out.rows {
                        let y = out.row(r);
                        let gy = g.row(r);
                        let inner: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                        for c in 0..out.cols {
                            if mask[r * out.cols + c] {
                                da.set(r, c, y[c] * (gy[c] - inner));
                            }
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Sum(a) => {
                    let src = self.value(*a);
                    accumulate(&mut adj, *a, Tensor::from_vec(src.rows, src.cols, vec![g.data[0]; src.len()]));
                }
                Op::Cosine(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (nx, ny) = (x.norm(), y.norm());
                    let (cx, cy) = (nx.max(NORM_EPS), ny.max(NORM_EPS));
                    // a clamped norm is constant
                    let kx = if nx < NORM_EPS { 0.0 } else { 1.0 / (nx * nx) };
                    let ky = if ny < NORM_EPS { 0.0 } else { 1.0 / (ny * ny) };
                    let c = out.data[0];
                    let s = g.data[0];
                    let dx = x.zip(y, |xi, yi| s * (yi / (cx * cy) - c * xi * kx));
                    let dy = y.zip(x, |yi, xi| s * (xi / (cx * cy) - c * yi * ky));
                    accumulate(&mut adj, *a, dx);
                    accumulate(&mut adj, *b, dy);
                }
                Op::BceWithLogits(s, label) => {
                    let d = sigmoid(self.scalar(*s)) - label;
                    accumulate(&mut adj, *s, Tensor::scalar(g.data[0] * d));
                }
                Op::SoftmaxXent(logits, targets) => {
                    let t = self.value(*logits);
                    let mut d = Tensor::zeros(t.rows, t.cols);
                    let scale = g.data[0] / t.rows as f64;
                    for (r, target) in targets.iter().enumerate() {
                        let row = t.row(r);
                        let lse = log_sum_exp(row);
                        for c in 0..t.cols {
                            let p = (row[c] - lse).exp();
                            d.set(r, c, scale * (p - if c == *target { 1.0 } else { 0.0 }));
                        }
                    }
                    accumulate(&mut adj, *logits, d);
                }
            }
        }
        grads
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Lower clamp on norms inside [`Tape::cosine`].
pub const NORM_EPS: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn bce_value(s: f64, label: f64) -> f64 {
    softplus(s) - label * s
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
