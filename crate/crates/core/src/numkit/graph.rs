use std::collections::HashMap;

use super::{Array, NumError, ParamStore};

pub type NodeId = usize;

/// Operation tag. Parents are stored inside the variant.
#[derive(Clone, Debug)]
pub enum Op {
    Const,
    /// Trainable leaf; the string indexes back into the [`ParamStore`].
    Param(String),
    Matmul(NodeId, NodeId),
    /// `a @ b^T` with `a: [m,k]`, `b: [n,k]`.
    MatmulNT(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Row-broadcast bias add: `[m,n] + [n]`.
    AddRow(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    /// Row gather from an embedding table; backward scatter-adds.
    Gather(NodeId, Vec<usize>),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Softplus(NodeId),
    /// Row-wise softmax (whole array for rank 1).
    SoftmaxRows(NodeId),
    /// Sum of all entries, to a scalar.
    Sum(NodeId),
    Clamp(NodeId, f64, f64),
    Reshape(NodeId),
}

/// One tape entry: the forward value, the op that produced it, and the
/// gradient accumulated during the backward pass.
pub struct Node {
    pub value: Array,
    pub op: Op,
    pub grad: Option<Array>,
    needs_grad: bool,
}

/// A computation tape. Nodes are appended in forward order, so reverse
/// iteration is a valid reverse-topological traversal.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    by_name: HashMap<String, NodeId>,
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id].value
    }

    /// Gradient accumulated at `id`, if any reached it during backward().
    pub fn grad(&self, id: NodeId) -> Option<&Array> {
        self.nodes[id].grad.as_ref()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    // Non-finite values are allowed through: divergence is detected and
    // reported at the loss level, not by crashing mid-forward.
    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            grad: None,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    // ── Leaves ───────────────────────────────────────────────────────

    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Const, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array::scalar(value))
    }

    /// Register a trainable leaf, cloning the current store value. A name
    /// registered twice returns the same node, so every consumer of a
    /// parameter shares one gradient accumulator.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId, NumError> {
        if let Some(&id) = self.by_name.get(name) {
            return Ok(id);
        }
        let value = store.get(name)?.clone();
        let id = self.push(value, Op::Param(name.to_string()), true);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Constant copy of an existing node's value (blocks gradient flow).
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.nodes[id].value.clone();
        self.constant(value)
    }

    /// Drop every node added after `len` was recorded, so a long-lived
    /// graph can serve many forward passes over the same parameters
    /// without growing. Parameters registered after the mark are
    /// forgotten too and may be re-registered.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.by_name.retain(|_, id| *id < len);
    }

    // ── Matrix ops ───────────────────────────────────────────────────

    fn want_matrix(&self, op: &'static str, id: NodeId) -> Result<(usize, usize), NumError> {
        let s = self.nodes[id].value.shape();
        if s.len() != 2 {
            return Err(NumError::NotMatrix {
                op,
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (m, k) = self.want_matrix("matmul", a)?;
        let (k2, n) = self.want_matrix("matmul", b)?;
        if k != k2 {
            return Err(NumError::DimensionMismatch {
                op: "matmul",
                lhs: self.nodes[a].value.shape().to_vec(),
                rhs: self.nodes[b].value.shape().to_vec(),
            });
        }
        let out = matmul_raw(&self.nodes[a].value, &self.nodes[b].value, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Matmul(a, b), needs))
    }

    /// `a @ b^T`, the natural orientation for `x W^T` layers and
    /// all-pairs inner-product scoring.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (m, k) = self.want_matrix("matmul_nt", a)?;
        let (n, k2) = self.want_matrix("matmul_nt", b)?;
        if k != k2 {
            return Err(NumError::DimensionMismatch {
                op: "matmul_nt",
                lhs: self.nodes[a].value.shape().to_vec(),
                rhs: self.nodes[b].value.shape().to_vec(),
            });
        }
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let arow = av.row(i);
            for j in 0..n {
                let brow = bv.row(j);
                let mut acc = 0.0;
                for t in 0..k {
                    acc += arow[t] * brow[t];
                }
                data[i * n + j] = acc;
            }
        }
        let out = Array::matrix(m, n, data).expect("matmul_nt shape");
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatmulNT(a, b), needs))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let (m, n) = self.want_matrix("transpose", a)?;
        let out = transpose_raw(&self.nodes[a].value, m, n);
        let needs = self.needs(a);
        Ok(self.push(out, Op::Transpose(a), needs))
    }

    // ── Elementwise binary ───────────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), NumError> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(NumError::DimensionMismatch {
                op,
                lhs: self.nodes[a].value.shape().to_vec(),
                rhs: self.nodes[b].value.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.same_shape("add", a, b)?;
        let out = zip_raw(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.same_shape("sub", a, b)?;
        let out = zip_raw(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.same_shape("mul", a, b)?;
        let out = zip_raw(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    /// `[m,n] + [n]` with the vector broadcast over rows.
    pub fn add_row(&mut self, mat: NodeId, vec: NodeId) -> Result<NodeId, NumError> {
        let (m, n) = self.want_matrix("add_row", mat)?;
        let vshape = self.nodes[vec].value.shape();
        if vshape != [n] {
            return Err(NumError::DimensionMismatch {
                op: "add_row",
                lhs: vec![m, n],
                rhs: vshape.to_vec(),
            });
        }
        let mv = &self.nodes[mat].value;
        let vv = self.nodes[vec].value.data();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (j, &vj) in vv.iter().enumerate() {
                data.push(mv.at(i, j) + vj);
            }
        }
        let out = Array::matrix(m, n, data).expect("add_row shape");
        let needs = self.needs(mat) || self.needs(vec);
        Ok(self.push(out, Op::AddRow(mat, vec), needs))
    }

    /// `[m,p] ++ [m,q] -> [m,p+q]` column-wise.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (m, p) = self.want_matrix("concat_cols", a)?;
        let (m2, q) = self.want_matrix("concat_cols", b)?;
        if m != m2 {
            return Err(NumError::DimensionMismatch {
                op: "concat_cols",
                lhs: vec![m, p],
                rhs: vec![m2, q],
            });
        }
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let out = Array::matrix(m, p + q, data).expect("concat shape");
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::ConcatCols(a, b), needs))
    }

    /// Gather rows of a `[v,d]` table into `[indices.len(), d]`.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, NumError> {
        let (v, d) = self.want_matrix("gather", table)?;
        for &ix in indices {
            if ix >= v {
                return Err(NumError::IndexOutOfRange { index: ix, rows: v });
            }
        }
        let tv = &self.nodes[table].value;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            data.extend_from_slice(tv.row(ix));
        }
        let out = Array::matrix(indices.len(), d, data).expect("gather shape");
        let needs = self.needs(table);
        Ok(self.push(out, Op::Gather(table, indices.to_vec()), needs))
    }

    // ── Elementwise unary ────────────────────────────────────────────

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = &self.nodes[a].value;
        let out = Array::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
            .expect("map shape");
        let needs = self.needs(a);
        self.push(out, op, needs)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, Op::AddScalar(a, c), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Ln(a), f64::ln)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Softplus(a), softplus_scalar)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Row-wise softmax with max-subtraction; rank-1 input is one row.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let (rows, cols) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / sum));
        }
        let out = Array::new(v.shape().to_vec(), data).expect("softmax shape");
        let needs = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), needs)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a].value.data().iter().sum();
        let needs = self.needs(a);
        self.push(Array::scalar(total), Op::Sum(a), needs)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, NumError> {
        let v = &self.nodes[a].value;
        let numel: usize = shape.iter().product();
        if numel != v.numel() {
            return Err(NumError::BadShape {
                shape: shape.to_vec(),
                len: v.numel(),
            });
        }
        let out = Array::new(shape.to_vec(), v.data().to_vec()).expect("reshape");
        let needs = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), needs))
    }

    // ── Composites ───────────────────────────────────────────────────

    /// Sum of elementwise products; inner product for matching shapes.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let prod = self.mul(a, b)?;
        Ok(self.sum(prod))
    }

    /// Fold a list of scalars into their sum.
    pub fn sum_scalars(&mut self, terms: &[NodeId]) -> Result<NodeId, NumError> {
        let mut acc = match terms.first() {
            Some(&t) => t,
            None => return Ok(self.scalar(0.0)),
        };
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    // ── Backward ─────────────────────────────────────────────────────

    fn accumulate(&mut self, id: NodeId, grad: Array) {
        debug_assert_eq!(self.nodes[id].value.shape(), grad.shape());
        match &mut self.nodes[id].grad {
            Some(g) => {
                for (gi, di) in g.data_mut().iter_mut().zip(grad.data()) {
                    *gi += di;
                }
            }
            None => self.nodes[id].grad = Some(grad),
        }
    }

    /// Reverse pass from a scalar loss. Populates node gradients and writes
    /// every trainable parameter's accumulated gradient back into `store`
    /// (zeroing the store's gradients first, so unreachable parameters end
    /// up with exact zeros).
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<(), NumError> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(NumError::NonScalarLoss {
                shape: self.nodes[loss].value.shape().to_vec(),
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss].grad = Some(Array::scalar(1.0));

        for id in (0..=loss).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            self.backward_node(id);
        }

        store.zero_grads();
        for n in &self.nodes {
            if let (Op::Param(name), Some(grad)) = (&n.op, &n.grad) {
                store.accumulate_grad(name, grad);
            }
        }
        Ok(())
    }

    fn backward_node(&mut self, id: NodeId) {
        let op = self.nodes[id].op.clone();
        let grad = self.nodes[id].grad.clone().expect("grad present");
        let g = grad.data();

        let wants = |s: &Self, p: NodeId| s.nodes[p].needs_grad;

        match op {
            Op::Const | Op::Param(_) => {}

            Op::Matmul(a, b) => {
                let (m, k) = {
                    let s = self.nodes[a].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[b].value.shape()[1];
                if wants(self, a) {
                    // dA = dC @ B^T
                    let bv = &self.nodes[b].value;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for t in 0..k {
                                da[i * k + t] += gij * bv.at(t, j);
                            }
                        }
                    }
                    self.accumulate(a, Array::matrix(m, k, da).unwrap());
                }
                if wants(self, b) {
                    // dB = A^T @ dC
                    let av = &self.nodes[a].value;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for t in 0..k {
                            let ait = av.at(i, t);
                            for j in 0..n {
                                db[t * n + j] += ait * g[i * n + j];
                            }
                        }
                    }
                    self.accumulate(b, Array::matrix(k, n, db).unwrap());
                }
            }

            Op::MatmulNT(a, b) => {
                let (m, k) = {
                    let s = self.nodes[a].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[b].value.shape()[0];
                if wants(self, a) {
                    // dA = dC @ B
                    let bv = &self.nodes[b].value;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            let brow = bv.row(j);
                            for t in 0..k {
                                da[i * k + t] += gij * brow[t];
                            }
                        }
                    }
                    self.accumulate(a, Array::matrix(m, k, da).unwrap());
                }
                if wants(self, b) {
                    // dB = dC^T @ A
                    let av = &self.nodes[a].value;
                    let mut db = vec![0.0; n * k];
                    for i in 0..m {
                        let arow = av.row(i);
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for t in 0..k {
                                db[j * k + t] += gij * arow[t];
                            }
                        }
                    }
                    self.accumulate(b, Array::matrix(n, k, db).unwrap());
                }
            }

            Op::Transpose(a) => {
                if wants(self, a) {
                    let (n, m) = {
                        let s = self.nodes[id].value.shape();
                        (s[0], s[1])
                    };
                    self.accumulate(a, transpose_raw(&grad, n, m));
                }
            }

            Op::Add(a, b) => {
                if wants(self, a) {
                    self.accumulate(a, grad.clone());
                }
                if wants(self, b) {
                    self.accumulate(b, grad);
                }
            }

            Op::Sub(a, b) => {
                if wants(self, a) {
                    self.accumulate(a, grad.clone());
                }
                if wants(self, b) {
                    let neg =
                        Array::new(grad.shape().to_vec(), g.iter().map(|x| -x).collect()).unwrap();
                    self.accumulate(b, neg);
                }
            }

            Op::Mul(a, b) => {
                if wants(self, a) {
                    let da = zip_raw(&grad, &self.nodes[b].value, |x, y| x * y);
                    self.accumulate(a, da);
                }
                if wants(self, b) {
                    let db = zip_raw(&grad, &self.nodes[a].value, |x, y| x * y);
                    self.accumulate(b, db);
                }
            }

            Op::AddRow(mat, vec) => {
                if wants(self, mat) {
                    self.accumulate(mat, grad.clone());
                }
                if wants(self, vec) {
                    let n = self.nodes[vec].value.numel();
                    let m = grad.numel() / n;
                    let mut dv = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dv[j] += g[i * n + j];
                        }
                    }
                    self.accumulate(vec, Array::from_vec(dv));
                }
            }

            Op::ConcatCols(a, b) => {
                let (m, p) = {
                    let s = self.nodes[a].value.shape();
                    (s[0], s[1])
                };
                let q = self.nodes[b].value.shape()[1];
                if wants(self, a) {
                    let mut da = Vec::with_capacity(m * p);
                    for i in 0..m {
                        da.extend_from_slice(&g[i * (p + q)..i * (p + q) + p]);
                    }
                    self.accumulate(a, Array::matrix(m, p, da).unwrap());
                }
                if wants(self, b) {
                    let mut db = Vec::with_capacity(m * q);
                    for i in 0..m {
                        db.extend_from_slice(&g[i * (p + q) + p..(i + 1) * (p + q)]);
                    }
                    self.accumulate(b, Array::matrix(m, q, db).unwrap());
                }
            }

            Op::Gather(table, indices) => {
                if wants(self, table) {
                    let (v, d) = {
                        let s = self.nodes[table].value.shape();
                        (s[0], s[1])
                    };
                    let mut dt = vec![0.0; v * d];
                    for (r, &ix) in indices.iter().enumerate() {
                        for j in 0..d {
                            dt[ix * d + j] += g[r * d + j];
                        }
                    }
                    self.accumulate(table, Array::matrix(v, d, dt).unwrap());
                }
            }

            Op::Scale(a, c) => {
                if wants(self, a) {
                    let da = Array::new(grad.shape().to_vec(), g.iter().map(|x| c * x).collect())
                        .unwrap();
                    self.accumulate(a, da);
                }
            }

            Op::AddScalar(a, _) | Op::Reshape(a) => {
                if wants(self, a) {
                    let da = Array::new(self.nodes[a].value.shape().to_vec(), g.to_vec()).unwrap();
                    self.accumulate(a, da);
                }
            }

            Op::Sigmoid(a) => {
                if wants(self, a) {
                    let da = zip_raw(&grad, &self.nodes[id].value, |gi, y| gi * y * (1.0 - y));
                    self.accumulate(a, da);
                }
            }

            Op::Tanh(a) => {
                if wants(self, a) {
                    let da = zip_raw(&grad, &self.nodes[id].value, |gi, y| gi * (1.0 - y * y));
                    self.accumulate(a, da);
                }
            }

            Op::Relu(a) => {
                if wants(self, a) {
                    let da = zip_raw(
                        &grad,
                        &self.nodes[a].value,
                        |gi, x| {
                            if x > 0.0 {
                                gi
                            } else {
                                0.0
                            }
                        },
                    );
                    self.accumulate(a, da);
                }
            }

            Op::Exp(a) => {
                if wants(self, a) {
                    let da = zip_raw(&grad, &self.nodes[id].value, |gi, y| gi * y);
                    self.accumulate(a, da);
                }
            }

            Op::Ln(a) => {
                if wants(self, a) {
                    let da = zip_raw(&grad, &self.nodes[a].value, |gi, x| gi / x);
                    self.accumulate(a, da);
                }
            }

            Op::Softplus(a) => {
                if wants(self, a) {
                    let da = zip_raw(&grad, &self.nodes[a].value, |gi, x| gi * sigmoid_scalar(x));
                    self.accumulate(a, da);
                }
            }

            Op::SoftmaxRows(a) => {
                if wants(self, a) {
                    let y = &self.nodes[id].value;
                    let (rows, cols) = (y.rows(), y.cols());
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let base = r * cols;
                        let mut dot = 0.0;
                        for c in 0..cols {
                            dot += g[base + c] * y.data()[base + c];
                        }
                        for c in 0..cols {
                            da[base + c] = y.data()[base + c] * (g[base + c] - dot);
                        }
                    }
                    self.accumulate(a, Array::new(y.shape().to_vec(), da).unwrap());
                }
            }

            Op::Sum(a) => {
                if wants(self, a) {
                    let da = Array::full(self.nodes[a].value.shape(), g[0]);
                    self.accumulate(a, da);
                }
            }

            Op::Clamp(a, lo, hi) => {
                if wants(self, a) {
                    let da = zip_raw(&grad, &self.nodes[a].value, |gi, x| {
                        if x > lo && x < hi {
                            gi
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(a, da);
                }
            }
        }
    }
}

fn matmul_raw(a: &Array, b: &Array, m: usize, k: usize, n: usize) -> Array {
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for (t, &ait) in arow.iter().enumerate().take(k) {
            if ait == 0.0 {
                continue;
            }
            let brow = b.row(t);
            for j in 0..n {
                data[i * n + j] += ait * brow[j];
            }
        }
    }
    Array::matrix(m, n, data).expect("matmul shape")
}

fn transpose_raw(a: &Array, m: usize, n: usize) -> Array {
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = a.data()[i * n + j];
        }
    }
    Array::matrix(n, m, data).expect("transpose shape")
}

fn zip_raw(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    debug_assert_eq!(a.numel(), b.numel());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Array::new(a.shape().to_vec(), data).expect("zip shape")
}
