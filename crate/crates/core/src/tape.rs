//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends a node holding its value and enough saved state
//! to apply its local gradient rule. Nodes only reference earlier nodes, so
//! walking the tape backwards is a valid reverse topological order and each
//! node is visited exactly once.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    SliceBlock {
        x: Var,
        r0: usize,
        c0: usize,
    },
    PadBlock {
        x: Var,
        r0: usize,
        c0: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    L1 {
        pred: Var,
        target: Var,
        rows: Vec<bool>,
        denom: S,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<S>,
        denom: S,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2(op)
    }

    // ---- forward ops -------------------------------------------------

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![S::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let out = transpose_data(self.value(x).data(), r, c);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<S>, name: &'static str, f: impl Fn(S, S) -> S) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(row).len() != n {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: vec![m, n],
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_exact_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(a, row), rg))
    }

    /// Scales row `i` of an `m×n` matrix by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mul_col")?;
        if self.value(col).len() != m {
            return Err(Error::Dimension {
                op: "mul_col",
                lhs: vec![m, n],
                rhs: self.shape(col).to_vec(),
            });
        }
        let c = self.value(col).data();
        let mut out = self.value(a).data().to_vec();
        for (chunk, &s) in out.chunks_exact_mut(n).zip(c) {
            for o in chunk.iter_mut() {
                *o *= s;
            }
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, x: Var, s: S) -> Var {
        let t = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, s), rg)
    }

    /// `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Row-wise softmax. `mask[i]` is `true` where a cell may receive mass;
    /// masked cells come out as exact zeros.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims2(x, "softmax_rows")?;
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::InvalidMask(format!(
                    "mask has {} cells, logits are {r}x{c}",
                    m.len()
                )));
            }
        }
        let out = softmax_data(self.value(x).data(), r, c, mask)?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::Softmax(x), rg))
    }

    /// Normalizes over the last axis, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let d = self.value(x).last_dim();
        for p in [gamma, beta] {
            if self.value(p).len() != d {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xs.len() / d;
        let dn = S::lit(d as f64);
        let mut xhat = vec![S::zero(); xs.len()];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Rows `rows` and columns `cols` of a matrix.
    pub fn slice_block(&mut self, x: Var, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_block")?;
        if rows.end > r || cols.end > c || rows.is_empty() || cols.is_empty() {
            return Err(Error::Input(format!(
                "block {rows:?}x{cols:?} outside {r}x{c}"
            )));
        }
        let src = self.value(x).data();
        let w = cols.len();
        let mut out = Vec::with_capacity(rows.len() * w);
        for i in rows.clone() {
            out.extend_from_slice(&src[i * c + cols.start..i * c + cols.end]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![rows.len(), w], out)?,
            Op::SliceBlock {
                x,
                r0: rows.start,
                c0: cols.start,
            },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, rows: std::ops::Range<usize>) -> Result<Var> {
        let (_, c) = self.dims2(x, "slice_rows")?;
        self.slice_block(x, rows, 0..c)
    }

    pub fn slice_cols(&mut self, x: Var, cols: std::ops::Range<usize>) -> Result<Var> {
        let (r, _) = self.dims2(x, "slice_cols")?;
        self.slice_block(x, 0..r, cols)
    }

    /// Embeds `x` into a zero matrix of shape `out_rows×out_cols` at `(r0, c0)`.
    pub fn pad_block(&mut self, x: Var, out_rows: usize, out_cols: usize, r0: usize, c0: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "pad_block")?;
        if r0 + r > out_rows || c0 + c > out_cols {
            return Err(Error::Input(format!(
                "{r}x{c} block at ({r0},{c0}) exceeds {out_rows}x{out_cols}"
            )));
        }
        let src = self.value(x).data();
        let mut out = vec![S::zero(); out_rows * out_cols];
        for i in 0..r {
            out[(r0 + i) * out_cols + c0..(r0 + i) * out_cols + c0 + c].copy_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![out_rows, out_cols], out)?, Op::PadBlock { x, r0, c0 }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Input("concat of nothing".into()))?;
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c2) = self.dims2(p, "concat_rows")?;
            if c2 != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: vec![rows, c],
                    rhs: vec![r, c2],
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, c], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Input("concat of nothing".into()))?;
        let (r, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r2, c) = self.dims2(p, "concat_cols")?;
            if r2 != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: vec![r, 0],
                    rhs: vec![r2, c],
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Mean absolute error over the coordinates of rows flagged in `visible`.
    pub fn l1_loss(&mut self, pred: Var, target: Var, visible: &[bool]) -> Result<Var> {
        self.same_shape(pred, target, "l1_loss")?;
        let (k, c) = self.dims2(pred, "l1_loss")?;
        if visible.len() != k {
            return Err(Error::InvalidMask(format!(
                "visibility has {} entries for {k} keypoints",
                visible.len()
            )));
        }
        let count = visible.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let mut total = S::zero();
        for (i, _) in visible.iter().enumerate().filter(|(_, &v)| v) {
            for j in 0..c {
                total += (p[i * c + j] - t[i * c + j]).abs();
            }
        }
        let denom = S::lit((count * c) as f64);
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::L1 {
                pred,
                target,
                rows: visible.to_vec(),
                denom,
            },
            rg,
        ))
    }

    /// Mean over rows with a target of `-log softmax(row)[target]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (r, c) = self.dims2(logits, "cross_entropy_rows")?;
        if targets.len() != r || targets.iter().flatten().any(|&t| t >= c) {
            return Err(Error::Input("cross-entropy targets do not match logits".into()));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let probs = softmax_data(self.value(logits).data(), r, c, None)?;
        let x = self.value(logits).data();
        let mut total = S::zero();
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = &x[i * c..(i + 1) * c];
                let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
                let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<S>().ln();
                total += lse - row[t];
            }
        }
        let denom = S::lit(count as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                denom,
            },
            rg,
        ))
    }

    // ---- backward ----------------------------------------------------

    /// Propagates gradients from a scalar `loss` to every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Rank {
                op: "backward",
                expected: 0,
                shape: self.shape(loss).to_vec(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
                continue;
            }
            self.apply_rule(i, &g);
        }
        Ok(())
    }

    /// Gradient accumulated into `v` by the last [`backward`](Self::backward);
    /// zeros if the node did not influence the loss.
    pub fn grad(&self, v: Var) -> Tensor<S> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape matches value"),
            None => Tensor::zeros(self.shape(v)),
        }
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [S], &[Node<S>])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![S::zero(); n]);
        f(slot, &self.nodes);
    }

    fn apply_rule(&mut self, i: usize, g: &[S]) {
        // Saved state is moved out so the node list can be borrowed while
        // input gradients are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let out_shape = self.nodes[i].value.shape().to_vec();
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2("matmul").unwrap();
                let n = out_shape[1];
                let (a, b) = (*a, *b);
                self.acc(a, |ga, nodes| gemm_nt(g, nodes[b.0].value.data(), m, n, k, ga));
                self.acc(b, |gb, nodes| gemm_tn(nodes[a.0].value.data(), g, m, k, n, gb));
            }
            Op::Transpose(x) => {
                let (r, c) = (out_shape[0], out_shape[1]);
                let t = transpose_data(g, r, c);
                self.acc(*x, |gx, _| add_into(gx, &t));
            }
            Op::Add(a, b) => {
                self.acc(*a, |ga, _| add_into(ga, g));
                self.acc(*b, |gb, _| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |ga, _| add_into(ga, g));
                self.acc(*b, |gb, _| {
                    for (o, &d) in gb.iter_mut().zip(g) {
                        *o -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |ga, nodes| {
                    for ((o, &d), &y) in ga.iter_mut().zip(g).zip(nodes[b.0].value.data()) {
                        *o += d * y;
                    }
                });
                self.acc(b, |gb, nodes| {
                    for ((o, &d), &x) in gb.iter_mut().zip(g).zip(nodes[a.0].value.data()) {
                        *o += d * x;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let n = out_shape[1];
                self.acc(*a, |ga, _| add_into(ga, g));
                self.acc(*row, |gr, _| {
                    for chunk in g.chunks_exact(n) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::MulCol(a, col) => {
                let n = out_shape[1];
                let (a, col) = (*a, *col);
                self.acc(a, |ga, nodes| {
                    let c = nodes[col.0].value.data();
                    for ((o, d), &s) in ga.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(c) {
                        for (oo, &dd) in o.iter_mut().zip(d) {
                            *oo += dd * s;
                        }
                    }
                });
                self.acc(col, |gc, nodes| {
                    let x = nodes[a.0].value.data();
                    for ((o, d), xr) in gc.iter_mut().zip(g.chunks_exact(n)).zip(x.chunks_exact(n)) {
                        *o += d.iter().zip(xr).map(|(&dd, &xx)| dd * xx).sum::<S>();
                    }
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.acc(*x, |gx, _| {
                    for (o, &d) in gx.iter_mut().zip(g) {
                        *o += d * s;
                    }
                });
            }
            Op::Relu(x) => {
                let x = *x;
                self.acc(x, |gx, nodes| {
                    for ((o, &d), &v) in gx.iter_mut().zip(g).zip(nodes[x.0].value.data()) {
                        if v > S::zero() {
                            *o += d;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let c = out_shape[1];
                let y = self.nodes[i].value.data().to_vec();
                self.acc(*x, |gx, _| {
                    for ((o, d), yr) in gx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(y.chunks_exact(c)) {
                        let dot: S = d.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((oo, &dd), &yy) in o.iter_mut().zip(d).zip(yr) {
                            *oo += yy * (dd - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *out_shape.last().unwrap();
                let (x, gamma, beta) = (*x, *gamma, *beta);
                self.acc(beta, |gb, _| {
                    for chunk in g.chunks_exact(d) {
                        add_into(gb, chunk);
                    }
                });
                self.acc(gamma, |gg, _| {
                    for (chunk, h) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for ((o, &dd), &hh) in gg.iter_mut().zip(chunk).zip(h) {
                            *o += dd * hh;
                        }
                    }
                });
                self.acc(x, |gx, nodes| {
                    let gm = nodes[gamma.0].value.data();
                    let dn = S::lit(d as f64);
                    let mut dh = vec![S::zero(); d];
                    for (r, ((o, dy), h)) in gx
                        .chunks_exact_mut(d)
                        .zip(g.chunks_exact(d))
                        .zip(xhat.chunks_exact(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            dh[j] = dy[j] * gm[j];
                        }
                        let m1 = dh.iter().copied().sum::<S>() / dn;
                        let m2 = dh.iter().zip(h).map(|(&a, &b)| a * b).sum::<S>() / dn;
                        for j in 0..d {
                            o[j] += inv_std[r] * (dh[j] - m1 - h[j] * m2);
                        }
                    }
                });
            }
            Op::SliceBlock { x, r0, c0 } => {
                let (r0, c0) = (*r0, *c0);
                let (rows, cols) = (out_shape[0], out_shape[1]);
                let x = *x;
                let src_c = self.nodes[x.0].value.shape()[1];
                self.acc(x, |gx, _| {
                    for i in 0..rows {
                        let dst = &mut gx[(r0 + i) * src_c + c0..(r0 + i) * src_c + c0 + cols];
                        add_into(dst, &g[i * cols..(i + 1) * cols]);
                    }
                });
            }
            Op::PadBlock { x, r0, c0 } => {
                let (r0, c0) = (*r0, *c0);
                let x = *x;
                let (rows, cols) = self.nodes[x.0].value.dims2("pad_block").unwrap();
                let out_c = out_shape[1];
                self.acc(x, |gx, _| {
                    for i in 0..rows {
                        let src = &g[(r0 + i) * out_c + c0..(r0 + i) * out_c + c0 + cols];
                        add_into(&mut gx[i * cols..(i + 1) * cols], src);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    self.acc(p, |gp, _| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out_shape[1];
                let mut off = 0;
                for &p in parts {
                    let (r, w) = self.nodes[p.0].value.dims2("concat_cols").unwrap();
                    self.acc(p, |gp, _| {
                        for i in 0..r {
                            add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + off..i * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::Sum(x) => {
                let d = g[0];
                self.acc(*x, |gx, _| {
                    for o in gx.iter_mut() {
                        *o += d;
                    }
                });
            }
            Op::L1 {
                pred,
                target,
                rows,
                denom,
            } => {
                let (pred, target) = (*pred, *target);
                let c = self.nodes[pred.0].value.shape()[1];
                let scale = g[0] / *denom;
                let p = self.nodes[pred.0].value.data();
                let t = self.nodes[target.0].value.data();
                let mut sg = vec![S::zero(); p.len()];
                for (r, _) in rows.iter().enumerate().filter(|(_, &v)| v) {
                    for j in 0..c {
                        let diff = p[r * c + j] - t[r * c + j];
                        sg[r * c + j] = if diff > S::zero() {
                            scale
                        } else if diff < S::zero() {
                            -scale
                        } else {
                            S::zero()
                        };
                    }
                }
                self.acc(pred, |gp, _| add_into(gp, &sg));
                self.acc(target, |gt, _| {
                    for (o, &s) in gt.iter_mut().zip(&sg) {
                        *o -= s;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                denom,
            } => {
                let c = self.nodes[logits.0].value.shape()[1];
                let scale = g[0] / *denom;
                self.acc(*logits, |gl, _| {
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for j in 0..c {
                                let onehot = if j == t { S::one() } else { S::zero() };
                                gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                            }
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

#[inline]
fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (o, &s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}

fn transpose_data<S: Scalar>(src: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
fn gemm_nt<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize, out: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + j] += s;
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
fn gemm_tn<S: Scalar>(a: &[S], b: &[S], k: usize, m: usize, n: usize, out: &mut [S]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Row softmax over `r×c` logits with an optional keep-mask. Masked cells
/// are excluded before max-subtraction and written as exact zeros.
pub(crate) fn softmax_data<S: Scalar>(x: &[S], r: usize, c: usize, mask: Option<&[bool]>) -> Result<Vec<S>> {
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let keep = |j: usize| mask.map_or(true, |m| m[i * c + j]);
        let mut mx = S::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > mx {
                mx = v;
            }
        }
        if mx == S::neg_infinity() {
            if (0..c).any(keep) {
                return Err(Error::NonFinite(format!("softmax row {i}")));
            }
            return Err(Error::InvalidMask(format!("row {i} has no unmasked entries")));
        }
        let orow = &mut out[i * c..(i + 1) * c];
        let mut total = S::zero();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                let e = (v - mx).exp();
                orow[j] = e;
                total += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= total;
        }
    }
    Ok(out)
}
