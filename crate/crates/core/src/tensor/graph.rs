use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis for the softmax family on 2-D values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Down each column.
    Rows,
    /// Along each row.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    MulConst(Var, Vec<f64>),
    Concat(Vec<Var>, Axis),
    Narrow {
        x: Var,
        axis: Axis,
        start: usize,
    },
    Rows(Var, Vec<usize>),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    Sum(Var),
    Mean(Var),
    L1(Var, Var),
    Pick(Var, usize),
    LogSumExp(Vec<Var>),
    LstmCell(Var, Var),
    StatPool(Var),
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    needs_grad: bool,
}

/// Variance floor applied before the square root in statistics pooling.
pub(crate) const POOL_VAR_FLOOR: f64 = 1e-10;

/// Single-threaded tape of executed operations. Nodes are appended in
/// execution order, so the node list is already a topological order and
/// [`Graph::backward`] walks it in reverse.
pub struct Graph<'p> {
    nodes: Vec<Node>,
    store: Option<&'p ParamStore>,
    param_vars: HashMap<ParamId, Var>,
    track_params: bool,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph<'static> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            store: None,
            param_vars: HashMap::new(),
            track_params: false,
        }
    }
}

impl<'p> Graph<'p> {
    /// Graph whose parameter leaves read from `store` and receive gradients.
    pub fn with_params(store: &'p ParamStore) -> Self {
        Graph {
            nodes: Vec::new(),
            store: Some(store),
            param_vars: HashMap::new(),
            track_params: true,
        }
    }

    /// Graph over `store` that never records parameter gradients.
    pub fn frozen(store: &'p ParamStore) -> Self {
        Graph {
            track_params: false,
            ..Self::with_params(store)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self
                .store
                .expect("parameter node without a store")
                .value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf: no gradient is tracked.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf, t, false, "constant")
    }

    /// Differentiable leaf whose gradient can be read back from [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf, t, true, "input")
    }

    /// Parameter leaf; one node per parameter per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let store = self.store.expect("graph has no parameter store");
        let needs_grad = self.track_params && store.is_trainable();
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, ng, "matmul")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(op, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(op, t, ng, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `a` (m × n) plus the row `bias` (1 × n) broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if self.value(bias).len() != n {
            return Err(Error::shape(
                "add_row",
                self.value(a).shape(),
                self.value(bias).shape(),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(Op::AddRow(a, bias), Tensor::matrix(m, n, data)?, ng, "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * s).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(a);
        self.push(Op::Scale(a, s), t, ng, "scale")
    }

    /// `a` times the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", self.value(a).shape(), self.value(s).shape()));
        }
        let k = self.value(s).item();
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * k).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(s);
        self.push(Op::ScaleBy(a, s), t, ng, "scale_by")
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, a: Var, k: Vec<f64>) -> Result<Var> {
        let t = self.value(a);
        if t.len() != k.len() {
            return Err(Error::shape("mul_const", t.shape(), &[k.len()]));
        }
        let data = t.data().iter().zip(&k).map(|(x, y)| x * y).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(a);
        self.push(Op::MulConst(a, k), t, ng, "mul_const")
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (r0, c0) = self.value(parts[0]).dims2();
        let t = match axis {
            Axis::Rows => {
                let mut rows = 0;
                let mut data = Vec::new();
                for p in parts {
                    let (r, c) = self.value(*p).dims2();
                    if c != c0 {
                        return Err(Error::shape("concat", &[r0, c0], &[r, c]));
                    }
                    rows += r;
                    data.extend_from_slice(self.value(*p).data());
                }
                Tensor::matrix(rows, c0, data)?
            }
            Axis::Cols => {
                let mut cols = 0;
                for p in parts {
                    let (r, c) = self.value(*p).dims2();
                    if r != r0 {
                        return Err(Error::shape("concat", &[r0, c0], &[r, c]));
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for p in parts {
                        data.extend_from_slice(self.value(*p).row_slice(i));
                    }
                }
                Tensor::matrix(r0, cols, data)?
            }
        };
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Op::Concat(parts.to_vec(), axis), t, ng, "concat")
    }

    /// `len` consecutive rows (`Axis::Rows`) or columns (`Axis::Cols`) starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        let src = self.value(x).data();
        let t = match axis {
            Axis::Rows => {
                if start + len > r {
                    return Err(Error::shape("narrow", &[r, c], &[start + len, c]));
                }
                Tensor::matrix(len, c, src[start * c..(start + len) * c].to_vec())?
            }
            Axis::Cols => {
                if start + len > c {
                    return Err(Error::shape("narrow", &[r, c], &[r, start + len]));
                }
                let mut data = Vec::with_capacity(r * len);
                for i in 0..r {
                    data.extend_from_slice(&src[i * c + start..i * c + start + len]);
                }
                Tensor::matrix(r, len, data)?
            }
        };
        let ng = self.ng(x);
        self.push(Op::Narrow { x, axis, start }, t, ng, "narrow")
    }

    /// Gather rows by index (repeats allowed).
    pub fn rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::shape("rows", &[r, c], &[i + 1, c]));
            }
            data.extend_from_slice(self.value(x).row_slice(i));
        }
        let t = Tensor::matrix(idx.len(), c, data)?;
        let ng = self.ng(x);
        self.push(Op::Rows(x, idx.to_vec()), t, ng, "rows")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(x);
        self.push(Op::Transpose(x), Tensor::matrix(c, r, data)?, ng, "transpose")
    }

    fn map(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(x);
        self.push(op, t, ng, name)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Relu(x), "relu", |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let t = self.value(x);
        let mut data = t.data().to_vec();
        for_groups(t.dims2(), axis, |idx| {
            let max = idx.clone().map(|i| data[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in idx.clone() {
                data[i] = (data[i] - max).exp();
                z += data[i];
            }
            for i in idx {
                data[i] /= z;
            }
        });
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(x);
        self.push(Op::Softmax(x, axis), t, ng, "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let t = self.value(x);
        let mut data = t.data().to_vec();
        for_groups(t.dims2(), axis, |idx| {
            let max = idx.clone().map(|i| data[i]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + idx.clone().map(|i| (data[i] - max).exp()).sum::<f64>().ln();
            for i in idx {
                data[i] -= lse;
            }
        });
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(x);
        self.push(Op::LogSoftmax(x, axis), t, ng, "log_softmax")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Op::Sum(x), Tensor::scalar(s), ng, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(x);
        self.push(Op::Mean(x), Tensor::scalar(s), ng, "mean")
    }

    /// Sum of absolute differences over every element.
    pub fn l1_loss(&mut self, prediction: Var, target: Var) -> Result<Var> {
        self.same_shape("l1_loss", prediction, target)?;
        let s = self
            .value(prediction)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t).abs())
            .sum();
        let ng = self.ng(prediction) || self.ng(target);
        self.push(Op::L1(prediction, target), Tensor::scalar(s), ng, "l1_loss")
    }

    /// Element at flat index `i` as a scalar node.
    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if i >= t.len() {
            return Err(Error::shape("pick", t.shape(), &[i + 1]));
        }
        let v = t.data()[i];
        let ng = self.ng(x);
        self.push(Op::Pick(x, i), Tensor::scalar(v), ng, "pick")
    }

    /// `log Σ exp(s_i)` over scalar nodes.
    pub fn log_sum_exp(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("log_sum_exp of zero terms".into()));
        }
        let vals: Vec<f64> = xs.iter().map(|v| self.value(*v).item()).collect();
        let v = lse(&vals);
        let ng = xs.iter().any(|x| self.ng(*x));
        self.push(Op::LogSumExp(xs.to_vec()), Tensor::scalar(v), ng, "log_sum_exp")
    }

    /// `-log_softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let k = self.value(logits).len();
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let ls = self.log_softmax(logits, Axis::Cols)?;
        let p = self.pick(ls, label)?;
        self.scale(p, -1.0)
    }

    /// One LSTM step. `gates` is the `1 × 4H` pre-activation in `[i, f, g, o]`
    /// order and `c_prev` the `1 × H` cell state; returns `1 × 2H` = `[h | c]`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let h = self.value(c_prev).len();
        if self.value(gates).len() != 4 * h {
            return Err(Error::shape(
                "lstm_cell",
                self.value(gates).shape(),
                self.value(c_prev).shape(),
            ));
        }
        let a = self.value(gates).data();
        let cp = self.value(c_prev).data();
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[h + j]);
            let g = a[2 * h + j].tanh();
            let o = sigmoid(a[3 * h + j]);
            let c = f * cp[j] + i * g;
            out[j] = o * c.tanh();
            out[h + j] = c;
        }
        let ng = self.ng(gates) || self.ng(c_prev);
        self.push(Op::LstmCell(gates, c_prev), Tensor::row(out), ng, "lstm_cell")
    }

    /// `T × D` → `1 × 2D`: per-dimension mean then population standard
    /// deviation (variance floored before the square root).
    pub fn stat_pool(&mut self, x: Var) -> Result<Var> {
        let (t, d) = self.value(x).dims2();
        if t == 0 || self.value(x).is_empty() {
            return Err(Error::EmptyInput("statistics pooling over zero frames".into()));
        }
        let (mean, std) = pool_stats(self.value(x).data(), t, d);
        let mut out = mean;
        out.extend(std);
        let ng = self.ng(x);
        self.push(Op::StatPool(x), Tensor::row(out), ng, "stat_pool")
    }

    /// Reverse pass from the scalar `loss`, visiting nodes in exact reverse
    /// execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[idx].value.as_ref();
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                if self.ng(*a) {
                    // dA += dC · Bᵀ
                    let buf = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, self.value(*b).data(), true, buf, 1.0);
                }
                if self.ng(*b) {
                    // dB += Aᵀ · dC
                    let buf = slot(grads, *b, k * n);
                    gemm(k, m, n, self.value(*a).data(), true, g, false, buf, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| axpy(d, g, 1.0));
                self.acc(grads, *b, |d| axpy(d, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| axpy(d, g, 1.0));
                self.acc(grads, *b, |d| axpy(d, g, -1.0));
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                self.acc(grads, *a, |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                });
                self.acc(grads, *b, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::AddRow(a, bias) => {
                self.acc(grads, *a, |d| axpy(d, g, 1.0));
                let n = self.value(*bias).len();
                self.acc(grads, *bias, |d| {
                    for row in g.chunks(n) {
                        axpy(d, row, 1.0);
                    }
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |d| axpy(d, g, *s)),
            Op::ScaleBy(a, s) => {
                let k = self.value(*s).item();
                self.acc(grads, *a, |d| axpy(d, g, k));
                let va = self.value(*a).data();
                let dot: f64 = g.iter().zip(va).map(|(x, y)| x * y).sum();
                self.acc(grads, *s, |d| d[0] += dot);
            }
            Op::MulConst(a, k) => self.acc(grads, *a, |d| {
                for ((d, g), k) in d.iter_mut().zip(g).zip(k) {
                    *d += g * k;
                }
            }),
            Op::Concat(parts, axis) => {
                let (_, total_c) = out.unwrap().dims2();
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.value(*p).dims2();
                    match axis {
                        Axis::Rows => {
                            let seg = &g[offset * total_c..(offset + r) * total_c];
                            self.acc(grads, *p, |d| axpy(d, seg, 1.0));
                            offset += r;
                        }
                        Axis::Cols => {
                            self.acc(grads, *p, |d| {
                                for i in 0..r {
                                    let src = &g[i * total_c + offset..i * total_c + offset + c];
                                    axpy(&mut d[i * c..(i + 1) * c], src, 1.0);
                                }
                            });
                            offset += c;
                        }
                    }
                }
            }
            Op::Narrow { x, axis, start } => {
                let (r, c) = self.value(*x).dims2();
                let (orows, ocols) = out.unwrap().dims2();
                self.acc(grads, *x, |d| match axis {
                    Axis::Rows => axpy(&mut d[start * c..(start + orows) * c], g, 1.0),
                    Axis::Cols => {
                        for i in 0..r {
                            axpy(
                                &mut d[i * c + start..i * c + start + ocols],
                                &g[i * ocols..(i + 1) * ocols],
                                1.0,
                            );
                        }
                    }
                });
            }
            Op::Rows(x, idx) => {
                let c = self.value(*x).cols();
                self.acc(grads, *x, |d| {
                    for (k, &i) in idx.iter().enumerate() {
                        axpy(&mut d[i * c..(i + 1) * c], &g[k * c..(k + 1) * c], 1.0);
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2();
                self.acc(grads, *x, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = out.unwrap().data();
                self.acc(grads, *x, |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = out.unwrap().data();
                self.acc(grads, *x, |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * (1.0 - y * y);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(xv) {
                        if *x > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Softmax(x, axis) => {
                let s = out.unwrap();
                let sd = s.data();
                self.acc(grads, *x, |d| {
                    for_groups(s.dims2(), *axis, |idx| {
                        let dot: f64 = idx.clone().map(|i| g[i] * sd[i]).sum();
                        for i in idx {
                            d[i] += sd[i] * (g[i] - dot);
                        }
                    });
                });
            }
            Op::LogSoftmax(x, axis) => {
                let y = out.unwrap();
                let yd = y.data();
                self.acc(grads, *x, |d| {
                    for_groups(y.dims2(), *axis, |idx| {
                        let gs: f64 = idx.clone().map(|i| g[i]).sum();
                        for i in idx {
                            d[i] += g[i] - yd[i].exp() * gs;
                        }
                    });
                });
            }
            Op::Sum(x) => self.acc(grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::L1(p, t) => {
                let pv = self.value(*p).data();
                let tv = self.value(*t).data();
                let sign = |a: f64, b: f64| {
                    if a > b {
                        1.0
                    } else if a < b {
                        -1.0
                    } else {
                        0.0
                    }
                };
                self.acc(grads, *p, |d| {
                    for ((d, a), b) in d.iter_mut().zip(pv).zip(tv) {
                        *d += g[0] * sign(*a, *b);
                    }
                });
                self.acc(grads, *t, |d| {
                    for ((d, a), b) in d.iter_mut().zip(pv).zip(tv) {
                        *d -= g[0] * sign(*a, *b);
                    }
                });
            }
            Op::Pick(x, i) => self.acc(grads, *x, |d| d[*i] += g[0]),
            Op::LogSumExp(xs) => {
                let y = out.unwrap().item();
                for x in xs {
                    let w = (self.value(*x).item() - y).exp();
                    self.acc(grads, *x, |d| d[0] += g[0] * w);
                }
            }
            Op::LstmCell(gates, c_prev) => {
                let hsz = self.value(*c_prev).len();
                let a = self.value(*gates).data();
                let cp = self.value(*c_prev).data();
                let c_out = &out.unwrap().data()[hsz..];
                let mut da = vec![0.0; 4 * hsz];
                let mut dcp = vec![0.0; hsz];
                for j in 0..hsz {
                    let i = sigmoid(a[j]);
                    let f = sigmoid(a[hsz + j]);
                    let gg = a[2 * hsz + j].tanh();
                    let o = sigmoid(a[3 * hsz + j]);
                    let tc = c_out[j].tanh();
                    let dh = g[j];
                    let dc = g[hsz + j] + dh * o * (1.0 - tc * tc);
                    da[j] = dc * gg * i * (1.0 - i);
                    da[hsz + j] = dc * cp[j] * f * (1.0 - f);
                    da[2 * hsz + j] = dc * i * (1.0 - gg * gg);
                    da[3 * hsz + j] = dh * tc * o * (1.0 - o);
                    dcp[j] = dc * f;
                }
                self.acc(grads, *gates, |d| axpy(d, &da, 1.0));
                self.acc(grads, *c_prev, |d| axpy(d, &dcp, 1.0));
            }
            Op::StatPool(x) => {
                let (t, dim) = self.value(*x).dims2();
                let xv = self.value(*x).data();
                let o = out.unwrap().data();
                let tf = t as f64;
                self.acc(grads, *x, |d| {
                    for j in 0..dim {
                        let mu = o[j];
                        let sd = o[dim + j];
                        let var: f64 = (0..t).map(|r| (xv[r * dim + j] - mu).powi(2)).sum::<f64>() / tf;
                        let var_floored = var < POOL_VAR_FLOOR;
                        for r in 0..t {
                            let mut v = g[j] / tf;
                            if !var_floored {
                                v += g[dim + j] * (xv[r * dim + j] - mu) / (tf * sd);
                            }
                            d[r * dim + j] += v;
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let n = self.value(v).len();
        f(slot(grads, v, n));
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_vars: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.param_vars.get(&id).and_then(|v| self.wrt(*v))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn lse(vals: &[f64]) -> f64 {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn pool_stats(x: &[f64], t: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let tf = t as f64;
    let mut mean = vec![0.0; d];
    for row in x.chunks(d) {
        axpy(&mut mean, row, 1.0);
    }
    mean.iter_mut().for_each(|m| *m /= tf);
    let mut var = vec![0.0; d];
    for row in x.chunks(d) {
        for j in 0..d {
            let e = row[j] - mean[j];
            var[j] += e * e;
        }
    }
    let std = var
        .iter()
        .map(|v| (v / tf).max(POOL_VAR_FLOOR).sqrt())
        .collect();
    (mean, std)
}

fn axpy(d: &mut [f64], x: &[f64], a: f64) {
    for (d, x) in d.iter_mut().zip(x) {
        *d += a * x;
    }
}

fn for_groups(dims: (usize, usize), axis: Axis, mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>)) {
    let (r, c) = dims;
    match axis {
        Axis::Cols => {
            for i in 0..r {
                f((i * c..(i + 1) * c).step_by(1));
            }
        }
        Axis::Rows => {
            for j in 0..c {
                f((j..r * c).step_by(c.max(1)));
            }
        }
    }
}

/// `C = A·B + beta·C` with optional transposes, `C` is `m × n`, inner dim `k`.
/// `A` is stored `m × k` (or `k × m` when `ta`), `B` stored `k × n` (or `n × k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover the strided m×k, k×n and m×n views above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
