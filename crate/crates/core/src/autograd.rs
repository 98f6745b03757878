//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables in creation
//! order, so the tape is already topologically sorted and [`Graph::backward`]
//! is a single reverse sweep. Graphs are single-threaded; independent graphs
//! can be built on different threads.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    /// `[m,n] + [n]` broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by [`Var`]. Nodes that the seed
/// does not reach have no entry.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = av.matmul(bv)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul_nt")?;
        let (n, k2) = bv.dims2("matmul_nt")?;
        if k != k2 {
            return Err(dim_err("matmul_nt", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), true, &mut out, 0.0);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.expect_same_shape("add", bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `[d]` or `[1,d]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rank() == 0 || rv.rows() != 1 || xv.rank() == 0 || xv.last_dim() != rv.len() {
            return Err(dim_err("add_row", xv, rv));
        }
        let n = rv.len();
        let r = rv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + r[i % n])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        self.push(value, Op::Scale(x, s))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || xv.shape()[axis] == 0 {
            return Err(Error::Dimension {
                op: "softmax",
                left: xv.shape().to_vec(),
                right: vec![axis],
            });
        }
        let value = softmax_axis(xv, axis);
        Ok(self.push(value, Op::Softmax { x, axis }))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        if d == 0 || gv.shape() != [d] || bv.shape() != [d] {
            return Err(dim_err("layer_norm", xv, gv));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        self.push(value, Op::Gelu(x))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2("slice_cols")?;
        if start + len > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: xv.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv.data()[i * n + start..i * n + start + len]);
        }
        let value = Tensor::new(vec![m, len], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| {
            Error::Input("concat_cols needs at least one input".into())
        })?);
        let (m, _) = first.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            let (pm, pn) = pv.dims2("concat_cols")?;
            if pm != m {
                return Err(dim_err("concat_cols", first, pv));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices (or vectors, as single rows) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| {
            Error::Input("concat_rows needs at least one input".into())
        })?);
        let d = first.last_dim();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() == 0 || pv.rank() > 2 || pv.last_dim() != d {
                return Err(dim_err("concat_rows", first, pv));
            }
            rows += pv.rows();
            out.extend_from_slice(pv.data());
        }
        let value = Tensor::new(vec![rows, d], out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Gathers rows of a matrix; the result is `[rows.len(), d]`.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (m, d) = xv.dims2("select_rows")?;
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= m {
                return Err(Error::Dimension {
                    op: "select_rows",
                    left: xv.shape().to_vec(),
                    right: vec![r],
                });
            }
            out.extend_from_slice(xv.row(r));
        }
        let value = Tensor::new(vec![rows.len(), d], out)?;
        Ok(self.push(
            value,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, k) = lv.dims2("cross_entropy")?;
        if labels.len() != b {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let probs = softmax_axis(lv, 1);
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= b as f64;
        let probs = probs.into_data();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::Dimension {
                    op: "weighted_sum",
                    left: t.shape().to_vec(),
                    right: vec![1],
                });
            }
            total += w * t.data()[0];
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    /// Reverse sweep from a scalar `root` seeded with 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.backward_with_seed(root, 1.0)
    }

    pub fn backward_with_seed(&self, root: Var, seed: f64) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                left: rv.shape().to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(rv.shape(), seed));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // dA = G·Bᵀ, dB = Aᵀ·G
                accumulate_with(grads, *a, av.shape(), |buf| {
                    gemm(m, n, k, g.data(), false, bv.data(), true, buf, 1.0)
                });
                accumulate_with(grads, *b, bv.shape(), |buf| {
                    gemm(k, m, n, av.data(), true, g.data(), false, buf, 1.0)
                });
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[0];
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                accumulate_with(grads, *a, av.shape(), |buf| {
                    gemm(m, n, k, g.data(), false, bv.data(), false, buf, 1.0)
                });
                accumulate_with(grads, *b, bv.shape(), |buf| {
                    gemm(n, m, k, g.data(), true, av.data(), false, buf, 1.0)
                });
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::AddRow(x, row) => {
                accumulate(grads, *x, g);
                let rshape = self.value(*row).shape().to_vec();
                let n = rshape.iter().product();
                accumulate_with(grads, *row, &rshape, |buf| {
                    for chunk in g.data().chunks(n) {
                        for (o, v) in buf.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate_with(grads, *x, g.shape(), |buf| {
                    for (o, v) in buf.iter_mut().zip(g.data()) {
                        *o += s * v;
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                accumulate_with(grads, *x, y.shape(), |buf| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |i: usize| (o * n + i) * inner + j;
                            let dot: f64 = (0..n).map(|i| y.data()[at(i)] * g.data()[at(i)]).sum();
                            for i in 0..n {
                                buf[at(i)] += y.data()[at(i)] * (g.data()[at(i)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma);
                let d = gv.len();
                let rows = rstd.len();
                accumulate_with(grads, *x, node.value.shape(), |buf| {
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv.data()[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dh =
                            dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            buf[r * d + j] += rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                });
                accumulate_with(grads, *gamma, &[d], |buf| {
                    for (gr, hr) in g.data().chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            buf[j] += gr[j] * hr[j];
                        }
                    }
                });
                accumulate_with(grads, *beta, &[d], |buf| {
                    for gr in g.data().chunks(d) {
                        for j in 0..d {
                            buf[j] += gr[j];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                accumulate_with(grads, *x, xv.shape(), |buf| {
                    for ((o, &xi), gi) in buf.iter_mut().zip(xv.data()).zip(g.data()) {
                        *o += gi * gelu_grad(xi);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (m, n) = (xv.shape()[0], xv.shape()[1]);
                let len = g.shape()[1];
                accumulate_with(grads, *x, xv.shape(), |buf| {
                    for i in 0..m {
                        for j in 0..len {
                            buf[i * n + start + j] += g.data()[i * len + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (g.shape()[0], g.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let w = shape[1];
                    accumulate_with(grads, p, &shape, |buf| {
                        for i in 0..m {
                            for j in 0..w {
                                buf[i * w + j] += g.data()[i * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let len: usize = shape.iter().product();
                    accumulate_with(grads, p, &shape, |buf| {
                        for (o, v) in buf.iter_mut().zip(&g.data()[offset..offset + len]) {
                            *o += v;
                        }
                    });
                    offset += len;
                }
            }
            Op::SelectRows { x, rows } => {
                let xv = self.value(*x);
                let d = xv.shape()[1];
                accumulate_with(grads, *x, xv.shape(), |buf| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..d {
                            buf[r * d + j] += g.data()[i * d + j];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let lv = self.value(*logits);
                let (b, k) = (lv.shape()[0], lv.shape()[1]);
                let s = g.data()[0] / b as f64;
                accumulate_with(grads, *logits, lv.shape(), |buf| {
                    for i in 0..b {
                        for j in 0..k {
                            let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                            buf[i * k + j] += s * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                let shape = self.value(*x).shape().to_vec();
                accumulate_with(grads, *x, &shape, |buf| buf.iter_mut().for_each(|o| *o += s));
            }
            Op::WeightedSum(terms) => {
                let s = g.data()[0];
                for &(v, w) in terms {
                    let shape = self.value(v).shape().to_vec();
                    accumulate_with(grads, v, &shape, |buf| buf[0] += s * w);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (o, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *o += x;
            }
        }
        slot @ None => *slot = Some(g.clone()),
    }
}

fn accumulate_with(
    grads: &mut [Option<Tensor>],
    v: Var,
    shape: &[usize],
    f: impl FnOnce(&mut [f64]),
) {
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
    f(slot.data_mut());
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along `axis` with max subtraction.
pub fn softmax_axis(x: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let mut out = vec![0.0; x.len()];
    let d = x.data();
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * n + i) * inner + j;
            let max = (0..n).map(|i| d[at(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..n {
                let e = (d[at(i)] - max).exp();
                out[at(i)] = e;
                total += e;
            }
            for i in 0..n {
                out[at(i)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
