//! Reverse-mode autodiff over a flat expression arena.
//!
//! A `Graph` owns every intermediate tensor of one forward pass. Nodes are
//! appended in evaluation order, so the reversed arena is already a valid
//! reverse topological order for backpropagation. The op set is exactly what
//! the recommendation models need; each op carries a hand-derived backward
//! rule, and the contract for all of them is the finite-difference check in
//! [`crate::numcore::gradcheck`].

use crate::error::{MolarError, Result};
use crate::numcore::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Source node; `tracked` decides whether backward keeps its gradient.
    Leaf { tracked: bool },
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `[m,n] + [n]` (or `[1,n]`) broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Elementwise `mul * x + add`.
    Affine(Var, f64, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    L2NormalizeRows(Var),
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
        len: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    /// Row-wise dot product of two `[m,n]` tensors -> `[m]`.
    RowDot(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    /// Diagonal of a square matrix -> `[n]`.
    TakeDiag(Var),
    /// Add a constant tensor (attention masks); no gradient into the constant.
    AddConst(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one scalar loss w.r.t. every tracked node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    /// Insert a constant input; backward does not keep its gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { tracked: false })
    }

    /// Insert a trainable input; its gradient is kept by `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { tracked: true })
    }

    // ── forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2(ta)?;
        let (k2, n) = dims2(tb)?;
        if k != k2 {
            return Err(MolarError::Shape(format!(
                "matmul: inner dims {k} vs {k2} (shapes {:?} x {:?})",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = dims2(ta)?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data()[i * n + j];
            }
        }
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = zip_same(self.value(a), self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.cols();
        if tb.numel() != n {
            return Err(MolarError::Shape(format!(
                "add_row: bias length {} vs row width {n}",
                tb.numel()
            )));
        }
        let rows = ta.numel() / n;
        let mut out = ta.data().to_vec();
        for r in 0..rows {
            for j in 0..n {
                out[r * n + j] += tb.data()[j];
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, Op::AddRow(a, bias)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = zip_same(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = zip_same(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let t = map(self.value(a), |x| mul * x + add);
        self.push(t, Op::Affine(a, mul, add))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = map(self.value(a), sigmoid_scalar);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::ln);
        self.push(t, Op::Log(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = map(self.value(a), |x| x.clamp(lo, hi));
        self.push(t, Op::Clamp(a, lo, hi))
    }

    /// Softmax over the last axis, max-stabilized.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let t = ta.softmax(ta.rank() - 1)?;
        Ok(self.push(t, Op::SoftmaxRows(a)))
    }

    /// Log-softmax over the last axis, max-stabilized.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.cols();
        let rows = ta.numel() / n;
        let mut out = ta.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * n..(r + 1) * n];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, Op::LogSoftmaxRows(a)))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.cols();
        if tg.numel() != n || tb.numel() != n {
            return Err(MolarError::Shape(format!(
                "layer_norm: gamma/beta length {}/{} vs width {n}",
                tg.numel(),
                tb.numel()
            )));
        }
        let rows = tx.numel() / n;
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[r * n + j] = tg.data()[j] * (row[j] - mean) * inv + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::LayerNormRows { x, gamma, beta, eps }))
    }

    /// Scale each row to unit L2 norm. Errors on a (near-)zero row, since the
    /// cosine similarity it feeds is undefined there.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.cols();
        let rows = ta.numel() / n;
        let mut out = ta.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * n..(r + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(MolarError::Numeric(format!(
                    "l2_normalize: row {r} has zero norm"
                )));
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, Op::L2NormalizeRows(a)))
    }

    /// Select rows of `table` (embedding lookup). Duplicate indices are fine;
    /// their gradients accumulate.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (rows, n) = dims2(tt)?;
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= rows {
                return Err(MolarError::Shape(format!(
                    "gather_rows: index {i} out of range for {rows} rows"
                )));
            }
            out.extend_from_slice(&tt.data()[i * n..(i + 1) * n]);
        }
        let t = Tensor::matrix(indices.len(), n, out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(MolarError::Shape("concat_rows: empty input".into()));
        }
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.cols() != n {
                return Err(MolarError::Shape(format!(
                    "concat_rows: width {} vs {n}",
                    tp.cols()
                )));
            }
            rows += tp.numel() / n;
            data.extend_from_slice(tp.data());
        }
        let t = Tensor::matrix(rows, n, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, n) = dims2(tx)?;
        if start + len > rows {
            return Err(MolarError::Shape(format!(
                "slice_rows: [{start}, {}) out of {rows} rows",
                start + len
            )));
        }
        let data = tx.data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::matrix(len, n, data)?;
        Ok(self.push(t, Op::SliceRows { x, start, len }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, n) = dims2(tx)?;
        if start + len > n {
            return Err(MolarError::Shape(format!(
                "slice_cols: [{start}, {}) out of {n} cols",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&tx.data()[r * n + start..r * n + start + len]);
        }
        let t = Tensor::matrix(rows, len, data)?;
        Ok(self.push(t, Op::SliceCols { x, start, len }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(MolarError::Shape("concat_cols: empty input".into()));
        }
        let rows = dims2(self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (r, c) = dims2(self.value(p))?;
            if r != rows {
                return Err(MolarError::Shape(format!(
                    "concat_cols: row count {r} vs {rows}"
                )));
            }
            widths.push(c);
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let tp = self.value(p);
                data.extend_from_slice(&tp.data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::matrix(rows, total, data)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(MolarError::Shape(format!(
                "row_dot: shapes {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let n = ta.cols();
        let rows = ta.numel() / n;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            out.push(
                ta.data()[r * n..(r + 1) * n]
                    .iter()
                    .zip(&tb.data()[r * n..(r + 1) * n])
                    .map(|(x, y)| x * y)
                    .sum(),
            );
        }
        let t = Tensor::from_vec(out);
        Ok(self.push(t, Op::RowDot(a, b)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let s = ta.data().iter().sum::<f64>() / ta.numel() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    pub fn take_diag(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = dims2(ta)?;
        if m != n {
            return Err(MolarError::Shape(format!(
                "take_diag: matrix is {m}x{n}, not square"
            )));
        }
        let out = (0..n).map(|i| ta.data()[i * n + i]).collect();
        Ok(self.push(Tensor::from_vec(out), Op::TakeDiag(a)))
    }

    /// Add a constant tensor to `a` (same shape). Used for attention masks.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let t = zip_same(self.value(a), c, "add_const", |x, y| x + y)?;
        Ok(self.push(t, Op::AddConst(a)))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Backpropagate from a scalar `loss` node through the whole arena.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(MolarError::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf { tracked } => {
                    if *tracked {
                        grads[idx] = Some(gout);
                    }
                    continue;
                }
                op => {
                    let accum = self.backprop_op(idx, op_clone(op), &gout)?;
                    for (var, g) in accum {
                        match &mut grads[var.0] {
                            Some(existing) => {
                                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                                    *e += v;
                                }
                            }
                            slot => *slot = Some(g),
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_op(&self, idx: usize, op: Op, gout: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let out = &self.nodes[idx].value;
        let v = |var: Var| &self.nodes[var.0].value;
        let mut res: Vec<(Var, Tensor)> = Vec::with_capacity(2);
        match op {
            Op::Matmul(a, b) => {
                let (m, k) = dims2(v(a))?;
                let n = dims2(v(b))?.1;
                // dA = dC * B^T
                let bt = transpose_raw(v(b).data(), k, n);
                let da = matmul_raw(gout.data(), &bt, m, n, k);
                // dB = A^T * dC
                let at = transpose_raw(v(a).data(), m, k);
                let db = matmul_raw(&at, gout.data(), k, m, n);
                res.push((a, Tensor::matrix(m, k, da)?));
                res.push((b, Tensor::matrix(k, n, db)?));
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(v(a))?;
                let g = transpose_raw(gout.data(), n, m);
                res.push((a, Tensor::matrix(m, n, g)?));
            }
            Op::Add(a, b) => {
                res.push((a, gout.clone()));
                res.push((b, reshape_like(gout, v(b))?));
            }
            Op::AddRow(a, bias) => {
                res.push((a, gout.clone()));
                let n = v(bias).numel();
                let rows = gout.numel() / n;
                let mut gb = vec![0.0; n];
                for r in 0..rows {
                    for j in 0..n {
                        gb[j] += gout.data()[r * n + j];
                    }
                }
                res.push((bias, Tensor::new(v(bias).shape().to_vec(), gb)?));
            }
            Op::Sub(a, b) => {
                res.push((a, gout.clone()));
                let gb = map(gout, |x| -x);
                res.push((b, reshape_like(&gb, v(b))?));
            }
            Op::Mul(a, b) => {
                let ga = zip_same(gout, v(b), "mul-bwd", |g, y| g * y)?;
                let gb = zip_same(gout, v(a), "mul-bwd", |g, x| g * x)?;
                res.push((a, reshape_like(&ga, v(a))?));
                res.push((b, reshape_like(&gb, v(b))?));
            }
            Op::Affine(a, mul, _) => {
                res.push((a, map(gout, |g| mul * g)));
            }
            Op::Sigmoid(a) => {
                let g = zip_same(gout, out, "sigmoid-bwd", |g, y| g * y * (1.0 - y))?;
                res.push((a, g));
            }
            Op::Tanh(a) => {
                let g = zip_same(gout, out, "tanh-bwd", |g, y| g * (1.0 - y * y))?;
                res.push((a, g));
            }
            Op::Relu(a) => {
                let g = zip_same(gout, v(a), "relu-bwd", |g, x| if x > 0.0 { g } else { 0.0 })?;
                res.push((a, g));
            }
            Op::Log(a) => {
                let g = zip_same(gout, v(a), "log-bwd", |g, x| g / x)?;
                res.push((a, g));
            }
            Op::Clamp(a, lo, hi) => {
                let g = zip_same(gout, v(a), "clamp-bwd", |g, x| {
                    if x > lo && x < hi {
                        g
                    } else {
                        0.0
                    }
                })?;
                res.push((a, g));
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let rows = out.numel() / n;
                let mut g = vec![0.0; out.numel()];
                for r in 0..rows {
                    let y = &out.data()[r * n..(r + 1) * n];
                    let go = &gout.data()[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(go).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..n {
                        g[r * n + j] = y[j] * (go[j] - dot);
                    }
                }
                res.push((a, Tensor::new(v(a).shape().to_vec(), g)?));
            }
            Op::LogSoftmaxRows(a) => {
                let n = out.cols();
                let rows = out.numel() / n;
                let mut g = vec![0.0; out.numel()];
                for r in 0..rows {
                    let logy = &out.data()[r * n..(r + 1) * n];
                    let go = &gout.data()[r * n..(r + 1) * n];
                    let gsum: f64 = go.iter().sum();
                    for j in 0..n {
                        g[r * n + j] = go[j] - logy[j].exp() * gsum;
                    }
                }
                res.push((a, Tensor::new(v(a).shape().to_vec(), g)?));
            }
            Op::LayerNormRows { x, gamma, beta, eps } => {
                let tx = v(x);
                let n = tx.cols();
                let rows = tx.numel() / n;
                let mut gx = vec![0.0; tx.numel()];
                let mut gg = vec![0.0; n];
                let mut gb = vec![0.0; n];
                let gamma_d = v(gamma).data();
                for r in 0..rows {
                    let row = &tx.data()[r * n..(r + 1) * n];
                    let go = &gout.data()[r * n..(r + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let dxhat: Vec<f64> = go.iter().zip(gamma_d).map(|(g, gm)| g * gm).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gx[r * n + j] = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        gg[j] += go[j] * xhat[j];
                        gb[j] += go[j];
                    }
                }
                res.push((x, Tensor::new(tx.shape().to_vec(), gx)?));
                res.push((gamma, Tensor::new(v(gamma).shape().to_vec(), gg)?));
                res.push((beta, Tensor::new(v(beta).shape().to_vec(), gb)?));
            }
            Op::L2NormalizeRows(a) => {
                let ta = v(a);
                let n = ta.cols();
                let rows = ta.numel() / n;
                let mut g = vec![0.0; ta.numel()];
                for r in 0..rows {
                    let x = &ta.data()[r * n..(r + 1) * n];
                    let y = &out.data()[r * n..(r + 1) * n];
                    let go = &gout.data()[r * n..(r + 1) * n];
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = go.iter().zip(y).map(|(g, yi)| g * yi).sum();
                    for j in 0..n {
                        g[r * n + j] = (go[j] - y[j] * dot) / norm;
                    }
                }
                res.push((a, Tensor::new(ta.shape().to_vec(), g)?));
            }
            Op::GatherRows { table, indices } => {
                let tt = v(table);
                let n = tt.cols();
                let mut g = vec![0.0; tt.numel()];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..n {
                        g[i * n + j] += gout.data()[k * n + j];
                    }
                }
                res.push((table, Tensor::new(tt.shape().to_vec(), g)?));
            }
            Op::ConcatRows(parts) => {
                let n = out.cols();
                let mut offset = 0;
                for p in parts {
                    let rows = v(p).numel() / n;
                    let slice = gout.data()[offset * n..(offset + rows) * n].to_vec();
                    res.push((p, Tensor::new(v(p).shape().to_vec(), slice)?));
                    offset += rows;
                }
            }
            Op::SliceRows { x, start, len } => {
                let tx = v(x);
                let n = tx.cols();
                let mut g = vec![0.0; tx.numel()];
                g[start * n..(start + len) * n].copy_from_slice(gout.data());
                res.push((x, Tensor::new(tx.shape().to_vec(), g)?));
            }
            Op::SliceCols { x, start, len } => {
                let tx = v(x);
                let (rows, n) = dims2(tx)?;
                let mut g = vec![0.0; tx.numel()];
                for r in 0..rows {
                    for j in 0..len {
                        g[r * n + start + j] = gout.data()[r * len + j];
                    }
                }
                res.push((x, Tensor::new(tx.shape().to_vec(), g)?));
            }
            Op::ConcatCols(parts) => {
                let rows = dims2(out)?.0;
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = dims2(v(p))?.1;
                    let mut g = vec![0.0; rows * w];
                    for r in 0..rows {
                        for j in 0..w {
                            g[r * w + j] = gout.data()[r * total + offset + j];
                        }
                    }
                    res.push((p, Tensor::matrix(rows, w, g)?));
                    offset += w;
                }
            }
            Op::RowDot(a, b) => {
                let ta = v(a);
                let n = ta.cols();
                let rows = ta.numel() / n;
                let mut ga = vec![0.0; ta.numel()];
                let mut gb = vec![0.0; ta.numel()];
                for r in 0..rows {
                    let gr = gout.data()[r];
                    for j in 0..n {
                        ga[r * n + j] = gr * v(b).data()[r * n + j];
                        gb[r * n + j] = gr * ta.data()[r * n + j];
                    }
                }
                res.push((a, Tensor::new(ta.shape().to_vec(), ga)?));
                res.push((b, Tensor::new(v(b).shape().to_vec(), gb)?));
            }
            Op::SumAll(a) => {
                let g = gout.item();
                res.push((a, Tensor::full(v(a).shape(), g)));
            }
            Op::MeanAll(a) => {
                let g = gout.item() / v(a).numel() as f64;
                res.push((a, Tensor::full(v(a).shape(), g)));
            }
            Op::TakeDiag(a) => {
                let n = gout.numel();
                let mut g = vec![0.0; n * n];
                for i in 0..n {
                    g[i * n + i] = gout.data()[i];
                }
                res.push((a, Tensor::matrix(n, n, g)?));
            }
            Op::AddConst(a) => {
                res.push((a, gout.clone()));
            }
            Op::Leaf { .. } => unreachable!("leaf handled above"),
        }
        Ok(res)
    }
}

fn op_clone(op: &Op) -> Op {
    match op {
        Op::Leaf { tracked } => Op::Leaf { tracked: *tracked },
        Op::Matmul(a, b) => Op::Matmul(*a, *b),
        Op::Transpose(a) => Op::Transpose(*a),
        Op::Add(a, b) => Op::Add(*a, *b),
        Op::AddRow(a, b) => Op::AddRow(*a, *b),
        Op::Sub(a, b) => Op::Sub(*a, *b),
        Op::Mul(a, b) => Op::Mul(*a, *b),
        Op::Affine(a, m, c) => Op::Affine(*a, *m, *c),
        Op::Sigmoid(a) => Op::Sigmoid(*a),
        Op::Tanh(a) => Op::Tanh(*a),
        Op::Relu(a) => Op::Relu(*a),
        Op::Log(a) => Op::Log(*a),
        Op::Clamp(a, lo, hi) => Op::Clamp(*a, *lo, *hi),
        Op::SoftmaxRows(a) => Op::SoftmaxRows(*a),
        Op::LogSoftmaxRows(a) => Op::LogSoftmaxRows(*a),
        Op::LayerNormRows { x, gamma, beta, eps } => Op::LayerNormRows {
            x: *x,
            gamma: *gamma,
            beta: *beta,
            eps: *eps,
        },
        Op::L2NormalizeRows(a) => Op::L2NormalizeRows(*a),
        Op::GatherRows { table, indices } => Op::GatherRows {
            table: *table,
            indices: indices.clone(),
        },
        Op::ConcatRows(p) => Op::ConcatRows(p.clone()),
        Op::SliceRows { x, start, len } => Op::SliceRows {
            x: *x,
            start: *start,
            len: *len,
        },
        Op::SliceCols { x, start, len } => Op::SliceCols {
            x: *x,
            start: *start,
            len: *len,
        },
        Op::ConcatCols(p) => Op::ConcatCols(p.clone()),
        Op::RowDot(a, b) => Op::RowDot(*a, *b),
        Op::SumAll(a) => Op::SumAll(*a),
        Op::MeanAll(a) => Op::MeanAll(*a),
        Op::TakeDiag(a) => Op::TakeDiag(*a),
        Op::AddConst(a) => Op::AddConst(*a),
    }
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        [n] => Ok((1, *n)),
        s => Err(MolarError::Shape(format!(
            "expected rank-2 tensor, got shape {s:?}"
        ))),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        .expect("same shape")
}

fn zip_same(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.numel() != b.numel() {
        return Err(MolarError::Shape(format!(
            "{what}: shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn reshape_like(g: &Tensor, target: &Tensor) -> Result<Tensor> {
    Tensor::new(target.shape().to_vec(), g.data().to_vec())
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aik = a[i * k + p];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
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

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_small_case() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn matmul_grad_matches_finite_difference() {
        // random 3x4 . 4x2, loss = sum(output), grad w.r.t. a
        let a_data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let b_data: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos()).collect();

        let loss = |a: &[f64]| -> f64 {
            let mut g = Graph::new();
            let av = g.param(Tensor::matrix(3, 4, a.to_vec()).unwrap());
            let bv = g.leaf(Tensor::matrix(4, 2, b_data.clone()).unwrap());
            let c = g.matmul(av, bv).unwrap();
            let s = g.sum_all(c);
            g.value(s).item()
        };

        let mut g = Graph::new();
        let av = g.param(Tensor::matrix(3, 4, a_data.clone()).unwrap());
        let bv = g.leaf(Tensor::matrix(4, 2, b_data.clone()).unwrap());
        let c = g.matmul(av, bv).unwrap();
        let s = g.sum_all(c);
        let grads = g.backward(s).unwrap();
        let analytic = grads.get(av).unwrap();

        let numeric = fd_grad(loss, &a_data, 1e-5);
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!(rel_err(*a, *n) < 1e-6, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn composite_ops_grad_matches_finite_difference() {
        // exercises sigmoid/tanh/mul/layer_norm/softmax/log/gather in one chain
        let x0: Vec<f64> = (0..12).map(|i| 0.3 * (i as f64).sin() + 0.1).collect();
        let gamma0 = vec![1.0, 0.9, 1.1, 1.2];
        let build = |x: &[f64], gamma: &[f64]| -> (Graph, Var, Var, Var) {
            let mut g = Graph::new();
            let xv = g.param(Tensor::matrix(3, 4, x.to_vec()).unwrap());
            let gv = g.param(Tensor::from_vec(gamma.to_vec()));
            let bv = g.leaf(Tensor::zeros(&[4]));
            let ln = g.layer_norm_rows(xv, gv, bv, 1e-8).unwrap();
            let s = g.sigmoid(ln);
            let t = g.tanh(xv);
            let m = g.mul(s, t).unwrap();
            let sm = g.softmax_rows(m).unwrap();
            let picked = g.gather_rows(sm, &[0, 2, 1]).unwrap();
            let cl = g.clamp(picked, 1e-7, 1.0 - 1e-7);
            let lg = g.log(cl);
            let loss = g.mean_all(lg);
            (g, xv, gv, loss)
        };
        let f = |x: &[f64], gamma: &[f64]| -> f64 {
            let (g, _, _, loss) = build(x, gamma);
            g.value(loss).item()
        };

        let (mut g, xv, gv, loss) = build(&x0, &gamma0);
        let grads = g.backward(loss).unwrap();

        let nx = fd_grad(|x| f(x, &gamma0), &x0, 1e-5);
        for (a, n) in grads.get(xv).unwrap().data().iter().zip(&nx) {
            assert!(rel_err(*a, *n) < 1e-6, "x grad {a} vs {n}");
        }
        let ng = fd_grad(|gm| f(&x0, gm), &gamma0, 1e-5);
        for (a, n) in grads.get(gv).unwrap().data().iter().zip(&ng) {
            assert!(rel_err(*a, *n) < 1e-6, "gamma grad {a} vs {n}");
        }
    }

    #[test]
    fn structural_ops_grad_matches_finite_difference() {
        // concat/slice/transpose/row_dot/l2_normalize/take_diag chain
        let x0: Vec<f64> = (0..8).map(|i| 0.5 + 0.2 * (i as f64).cos()).collect();
        let f = |x: &[f64]| -> (Graph, Var, Var) {
            let mut g = Graph::new();
            let xv = g.param(Tensor::matrix(2, 4, x.to_vec()).unwrap());
            let nm = g.l2_normalize_rows(xv).unwrap();
            let t = g.transpose(nm).unwrap();
            let sim = g.matmul(nm, t).unwrap();
            let d = g.take_diag(sim).unwrap();
            let a = g.slice_cols(xv, 0, 2).unwrap();
            let b = g.slice_cols(xv, 2, 2).unwrap();
            let cc = g.concat_cols(&[b, a]).unwrap();
            let rd = g.row_dot(cc, xv).unwrap();
            let both = g.concat_rows(&[d, rd]).unwrap();
            let loss = g.sum_all(both);
            (g, xv, loss)
        };
        let val = |x: &[f64]| {
            let (g, _, l) = f(x);
            g.value(l).item()
        };
        let (mut g, xv, loss) = f(&x0);
        let grads = g.backward(loss).unwrap();
        let numeric = fd_grad(val, &x0, 1e-5);
        for (a, n) in grads.get(xv).unwrap().data().iter().zip(&numeric) {
            assert!(rel_err(*a, *n) < 1e-6, "grad {a} vs {n}");
        }
    }

    #[test]
    fn log_softmax_grad() {
        let x0 = vec![0.2, -0.4, 1.1, 0.5, 0.0, -0.7];
        let f = |x: &[f64]| -> (Graph, Var, Var) {
            let mut g = Graph::new();
            let xv = g.param(Tensor::matrix(2, 3, x.to_vec()).unwrap());
            let ls = g.log_softmax_rows(xv).unwrap();
            let d = g.gather_rows(ls, &[0]).unwrap();
            let loss = g.sum_all(d);
            (g, xv, loss)
        };
        let (mut g, xv, loss) = f(&x0);
        let grads = g.backward(loss).unwrap();
        let numeric = fd_grad(
            |x| {
                let (g, _, l) = f(x);
                g.value(l).item()
            },
            &x0,
            1e-5,
        );
        for (a, n) in grads.get(xv).unwrap().data().iter().zip(&numeric) {
            assert!(rel_err(*a, *n) < 1e-6);
        }
    }

    #[test]
    fn untracked_leaf_keeps_no_grad() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let s = g.sum_all(a);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).is_none());
    }

    #[test]
    fn zero_norm_row_is_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap());
        assert!(g.l2_normalize_rows(a).is_err());
    }
}
