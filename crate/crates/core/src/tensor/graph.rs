//! Append-only operation tape and reverse-mode backward pass.

use super::{contract, dot_slices as dot, matmul_raw, Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`]. Valid only for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    L2Normalize(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    Sum(Var),
    Mean(Var),
    MeanAxis0(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Operation tape. Nodes are appended in execution order, so every node's
/// inputs precede it and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const LOG_FLOOR: f64 = 1e-12;

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Copy of a node's value as a fresh gradient-free leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated for `v`, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::DimMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    // ── elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor {
            shape: self.value(a).shape().to_vec(),
            data,
        };
        Ok(self.push_op(out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor {
            shape: self.value(a).shape().to_vec(),
            data,
        };
        Ok(self.push_op(out, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor {
            shape: self.value(a).shape().to_vec(),
            data,
        };
        Ok(self.push_op(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push_op(out, &[a], Op::Scale(a, c))
    }

    /// Row-bias broadcast: `x[R,C] + b[C]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(TensorError::DimMismatch {
                op: "add_bias",
                lhs: xs,
                rhs: bs,
            });
        }
        let (rows, cols) = (xs[0], xs[1]);
        let mut data = self.value(x).data().to_vec();
        let bias = self.value(b).data();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += bias[c];
            }
        }
        let out = Tensor { shape: xs, data };
        Ok(self.push_op(out, &[x, b], Op::AddBias(x, b)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push_op(out, &[a], Op::Exp(a))
    }

    /// Natural log with the argument floored at 1e-12.
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(LOG_FLOOR).ln());
        self.push_op(out, &[a], Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_op(out, &[a], Op::Relu(a))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor {
            shape: vec![m, n],
            data,
        };
        Ok(self.push_op(out, &[a, b], Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(TensorError::BadRank {
                op: "transpose",
                expected: 2,
                shape: s.to_vec(),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let out = Tensor {
            shape: vec![cols, rows],
            data,
        };
        Ok(self.push_op(out, &[a], Op::Transpose(a)))
    }

    // ── normalizations ──────────────────────────────────────────────────

    /// Softmax along the last axis, with max-subtraction for stability.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let k = *shape.last().unwrap_or(&0);
        if k == 0 {
            return Err(TensorError::BadRank {
                op: "softmax",
                expected: 1,
                shape,
            });
        }
        let src = self.value(a).data();
        let rows = src.len() / k;
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                data[r * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                data[r * k + j] /= sum;
            }
        }
        let out = Tensor { shape, data };
        Ok(self.push_op(out, &[a], Op::Softmax(a)))
    }

    /// Softmax along `axis` of a 2D tensor (axis 0 goes through transposes).
    pub fn softmax_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let rank = self.value(a).rank();
        if axis + 1 == rank {
            return self.softmax(a);
        }
        if rank != 2 || axis != 0 {
            return Err(TensorError::BadRank {
                op: "softmax_axis",
                expected: 2,
                shape: self.value(a).shape().to_vec(),
            });
        }
        let t = self.transpose(a)?;
        let s = self.softmax(t)?;
        self.transpose(s)
    }

    /// L2-normalizes each row of the last axis. Errors on rows with norm
    /// below 1e-12 rather than dividing silently.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let k = *shape.last().unwrap_or(&0);
        if k == 0 {
            return Err(TensorError::BadRank {
                op: "l2_normalize",
                expected: 1,
                shape,
            });
        }
        let src = self.value(a).data();
        let rows = src.len() / k;
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * k..(r + 1) * k];
            let n = dot(row, row).sqrt();
            if n < 1e-12 {
                return Err(TensorError::DegenerateNorm {
                    op: "l2_normalize",
                    norm: n,
                });
            }
            for j in 0..k {
                data[r * k + j] = row[j] / n;
            }
        }
        let out = Tensor { shape, data };
        Ok(self.push_op(out, &[a], Op::L2Normalize(a)))
    }

    /// Per-row layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(TensorError::BadRank {
                op: "layer_norm",
                expected: 2,
                shape: xs,
            });
        }
        let (rows, cols) = (xs[0], xs[1]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.value(v).shape();
            if s != [cols] {
                return Err(contract(
                    "layer_norm",
                    format!("{name} shape {:?} does not match feature dim {cols}", s),
                ));
            }
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                data[r * cols + c] = (row[c] - mean) * inv_std * g[c] + b[c];
            }
        }
        let out = Tensor { shape: xs, data };
        Ok(self.push_op(out, &[x, gamma, beta], Op::LayerNorm { x, gamma, beta, eps }))
    }

    // ── reductions and reshuffles ───────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push_op(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1);
        let s = self.value(a).data().iter().sum::<f64>() / n as f64;
        self.push_op(Tensor::scalar(s), &[a], Op::Mean(a))
    }

    /// Mean over rows: `[R,C] -> [1,C]`.
    pub fn mean_axis0(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        if s.len() != 2 || s[0] == 0 {
            return Err(TensorError::BadRank {
                op: "mean_axis0",
                expected: 2,
                shape: s,
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c] += src[r * cols + c];
            }
        }
        for v in &mut data {
            *v /= rows as f64;
        }
        let out = Tensor {
            shape: vec![1, cols],
            data,
        };
        Ok(self.push_op(out, &[a], Op::MeanAxis0(a)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract("concat_rows", "no tensors to concatenate"));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[1] != cols {
                return Err(TensorError::DimMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor {
            shape: vec![rows, cols],
            data,
        };
        Ok(self.push_op(out, &parts.to_vec(), Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract("concat_cols", "no tensors to concatenate"));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(TensorError::DimMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            cols += s[1];
        }
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for &p in parts {
            let pc = self.value(p).cols();
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * cols + offset..r * cols + offset + pc]
                    .copy_from_slice(&src[r * pc..(r + 1) * pc]);
            }
            offset += pc;
        }
        let out = Tensor {
            shape: vec![rows, cols],
            data,
        };
        Ok(self.push_op(out, &parts.to_vec(), Op::ConcatCols(parts.to_vec())))
    }

    /// Selects rows by index, in the given order. Differentiable in the
    /// source (scatter-add), not in the indices.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(TensorError::BadRank {
                op: "gather_rows",
                expected: 2,
                shape: s.to_vec(),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let out = Tensor {
            shape: vec![indices.len(), cols],
            data,
        };
        Ok(self.push_op(out, &[a], Op::GatherRows(a, indices.to_vec())))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar node. Each call adds one full gradient of
    /// `loss` into the persistent buffers; use [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.value(loss).shape().to_vec(),
            });
        }
        // Pass-local buffers so repeated backward calls accumulate exactly
        // one gradient each instead of compounding earlier ones.
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            pass[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = pass[id].take() else {
                continue;
            };
            let op = self.nodes[id].op.clone();
            self.backprop_node(&op, &g, id, &mut pass);
            pass[id] = Some(g);
        }
        for (id, g) in pass.into_iter().enumerate() {
            if let Some(g) = g {
                let grad = self.nodes[id]
                    .grad
                    .get_or_insert_with(|| vec![0.0; g.len()]);
                for (dst, src) in grad.iter_mut().zip(&g) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }

    fn accumulate_into(&self, pass: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        debug_assert_eq!(numel, delta.len());
        let grad = pass[v.0].get_or_insert_with(|| vec![0.0; numel]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn backprop_node(&mut self, op: &Op, g: &[f64], id: usize, pass: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_into(pass, a, g);
                self.accumulate_into(pass, b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate_into(pass, a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate_into(pass, b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(gv, bv)| gv * bv)
                    .collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(gv, av)| gv * av)
                    .collect();
                self.accumulate_into(pass, a, &da);
                self.accumulate_into(pass, b, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.accumulate_into(pass, a, &da);
            }
            Op::AddBias(x, b) => {
                self.accumulate_into(pass, x, g);
                let cols = self.value(b).numel();
                let mut db = vec![0.0; cols];
                for (i, gv) in g.iter().enumerate() {
                    db[i % cols] += gv;
                }
                self.accumulate_into(pass, b, &db);
            }
            Op::Exp(a) => {
                let out = self.nodes[id].value.data();
                let da: Vec<f64> = g.iter().zip(out).map(|(gv, ov)| gv * ov).collect();
                self.accumulate_into(pass, a, &da);
            }
            Op::Log(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(gv, av)| gv / av.max(LOG_FLOOR))
                    .collect();
                self.accumulate_into(pass, a, &da);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(gv, av)| if *av > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate_into(pass, a, &da);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                let av = self.value(a).data();
                let bv = self.value(b).data();
                // da[M,K] = g[M,N] · bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        da[i * k + p] = dot(&g[i * n..(i + 1) * n], &bv[p * n..(p + 1) * n]);
                    }
                }
                // db[K,N] = aᵀ · g[M,N]
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aval = av[i * k + p];
                        if aval == 0.0 {
                            continue;
                        }
                        let row = &mut db[p * n..(p + 1) * n];
                        for j in 0..n {
                            row[j] += aval * gr[j];
                        }
                    }
                }
                self.accumulate_into(pass, a, &da);
                self.accumulate_into(pass, b, &db);
            }
            Op::Transpose(a) => {
                let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] = g[c * rows + r];
                    }
                }
                self.accumulate_into(pass, a, &da);
            }
            Op::Softmax(a) => {
                let out = self.nodes[id].value.data();
                let k = self.nodes[id].value.last_dim();
                let rows = out.len() / k;
                let mut da = vec![0.0; out.len()];
                for r in 0..rows {
                    let y = &out[r * k..(r + 1) * k];
                    let gr = &g[r * k..(r + 1) * k];
                    let gy = dot(gr, y);
                    for j in 0..k {
                        da[r * k + j] = y[j] * (gr[j] - gy);
                    }
                }
                self.accumulate_into(pass, a, &da);
            }
            Op::L2Normalize(a) => {
                let src = self.value(a).data();
                let k = self.value(a).last_dim();
                let rows = src.len() / k;
                let mut da = vec![0.0; src.len()];
                for r in 0..rows {
                    let x = &src[r * k..(r + 1) * k];
                    let gr = &g[r * k..(r + 1) * k];
                    let n = dot(x, x).sqrt();
                    let gy = dot(gr, x) / (n * n);
                    for j in 0..k {
                        da[r * k + j] = (gr[j] - x[j] * gy) / n;
                    }
                }
                self.accumulate_into(pass, a, &da);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let src = self.value(x).data();
                let (rows, cols) = (self.value(x).rows(), self.value(x).cols());
                let gam = self.value(gamma).data().to_vec();
                let mut dx = vec![0.0; src.len()];
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for r in 0..rows {
                    let row = &src[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = gr.iter().zip(&gam).map(|(gv, gm)| gv * gm).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        dx[r * cols + c] =
                            inv_std * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                        dgamma[c] += gr[c] * xhat[c];
                        dbeta[c] += gr[c];
                    }
                }
                self.accumulate_into(pass, x, &dx);
                self.accumulate_into(pass, gamma, &dgamma);
                self.accumulate_into(pass, beta, &dbeta);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(a).numel()];
                self.accumulate_into(pass, a, &da);
            }
            Op::Mean(a) => {
                let n = self.value(a).numel().max(1);
                let da = vec![g[0] / n as f64; self.value(a).numel()];
                self.accumulate_into(pass, a, &da);
            }
            Op::MeanAxis0(a) => {
                let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] = g[c] / rows as f64;
                    }
                }
                self.accumulate_into(pass, a, &da);
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let slice = g[offset..offset + n].to_vec();
                    self.accumulate_into(pass, p, &slice);
                    offset += n;
                }
            }
            Op::ConcatCols(ref parts) => {
                let rows = self.value(parts[0]).rows();
                let total_cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut dp = vec![0.0; rows * pc];
                    for r in 0..rows {
                        dp[r * pc..(r + 1) * pc]
                            .copy_from_slice(&g[r * total_cols + offset..r * total_cols + offset + pc]);
                    }
                    self.accumulate_into(pass, p, &dp);
                    offset += pc;
                }
            }
            Op::GatherRows(a, ref indices) => {
                let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
                let mut da = vec![0.0; rows * cols];
                for (k, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        da[i * cols + c] += g[k * cols + c];
                    }
                }
                self.accumulate_into(pass, a, &da);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = Tensor::matrix(3, 3, vec![0.3, -1.2, 2.0, 0.5, 4.0, -0.7, 1.1, 0.0, 9.5]).unwrap();
        let i = g.constant(eye);
        let av = g.constant(a.clone());
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn matmul_forced() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let b = g.constant(Tensor::matrix(2, 1, vec![1., 1.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_forced() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[0.7, 0.7, 0.7, 0.7]));
        let s = g.softmax(x).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        // softmax([0, ln2, ln3]) = [1/6, 2/6, 3/6]
        let x = g.constant(Tensor::row(&[0.0, 2.0_f64.ln(), 3.0_f64.ln()]));
        let s = g.softmax(x).unwrap();
        let want = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (v, w) in g.value(s).data().iter().zip(want) {
            assert!((v - w).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(
            Tensor::matrix(2, 3, vec![10.0, -4.0, 0.5, 100.0, 99.0, 98.0]).unwrap(),
        );
        let s = g.softmax(x).unwrap();
        for r in 0..2 {
            let sum: f64 = g.value(s).row_slice(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for &v in g.value(s).row_slice(r) {
                assert!(v > 0.0 && v <= 1.0);
            }
        }
    }

    #[test]
    fn softmax_empty_axis_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 0]));
        assert!(g.softmax(x).is_err());
    }

    #[test]
    fn l2_normalize_forced_and_idempotent() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[3.0, 4.0]));
        let y = g.l2_normalize(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.6, 0.8]);
        let z = g.l2_normalize(y).unwrap();
        for (a, b) in g.value(z).data().iter().zip(g.value(y).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_degenerate_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[0.0, 0.0]));
        assert!(matches!(
            g.l2_normalize(x),
            Err(TensorError::DegenerateNorm { .. })
        ));
    }

    #[test]
    fn elementwise_trivials() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let e = g.exp(x);
        assert_eq!(g.value(e).item(), 1.0);

        let src = g.constant(Tensor::matrix(3, 1, vec![10.0, 20.0, 30.0]).unwrap());
        let picked = g.gather_rows(src, &[2, 0]).unwrap();
        assert_eq!(g.value(picked).data(), &[30.0, 10.0]);
    }

    #[test]
    fn gather_out_of_range_errors() {
        let mut g = Graph::new();
        let src = g.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(
            g.gather_rows(src, &[3]),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn backward_accumulates_and_zero_grad_resets() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[1.0, 2.0]), true);
        let y = g.mul(x, x).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
        // second backward without reset accumulates
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[1.0, 2.0]), true);
        let y = g.relu(x);
        assert!(matches!(
            g.backward(y),
            Err(TensorError::NotScalar { .. })
        ));
    }

    #[test]
    fn no_grad_flows_to_constants() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[1.0, -0.5]), true);
        let c = g.constant(Tensor::row(&[2.0, 3.0]));
        let y = g.mul(x, c).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[1.5, -2.0]), true);
        let d = g.detach(x);
        let y = g.mul(d, d).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn concat_and_transpose_roundtrip() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let cat = g.concat_rows(&[a, b]).unwrap();
        assert_eq!(g.value(cat).shape(), &[2, 2]);
        let t = g.transpose(cat).unwrap();
        let tt = g.transpose(t).unwrap();
        assert_eq!(g.value(tt).data(), g.value(cat).data());

        let cc = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(cc).shape(), &[1, 4]);
        assert_eq!(g.value(cc).data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
