//! A small reverse-mode autodiff tape over [`Mat`] values.
//!
//! The tape is append-only: every operation pushes a node holding its value
//! and enough bookkeeping to run the backward pass. Leaf values are shared
//! through `Arc` so feeding model parameters into a tape does not copy them.
//! A tape built with [`Tape::no_grad`] records values only.

use std::sync::Arc;

use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Gather { table: Var, idx: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Mat },
    Kl { logits: Var, probs: Mat, log_ratio: Mat },
}

struct Node {
    value: Arc<Mat>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(512), grad_enabled: true }
    }

    pub fn no_grad() -> Self {
        Self { nodes: Vec::with_capacity(512), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Mat> {
        self.nodes[v.0].value.clone()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Arc<Mat>) -> Var {
        let requires_grad = self.grad_enabled;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_arc(&mut self, value: Arc<Mat>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulT(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.rows(), 1, "add_row expects a row vector");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols(), bv.cols(), "add_row width mismatch");
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::AddRow(a, b), rg)
    }

    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let v = self.value(a).zip_map(c, |x, y| x + y);
        let rg = self.rg(a);
        self.push(v, Op::AddConst(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// Multiplies `a` by the `1 x 1` variable `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let v = self.value(a).scale(sv);
        let rg = self.rg(a) || self.rg(s);
        self.push(v, Op::MulScalar(a, s), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_rows();
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gv + bv;
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg)
    }

    /// Row lookup: output row `i` is `table[idx[i]]`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(idx.len(), t.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        self.push(out, Op::Gather { table, idx: idx.to_vec() }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(x);
        self.push(out, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let n = xv.rows() as f64;
        out.data_mut().iter_mut().for_each(|v| *v /= n);
        let rg = self.rg(x);
        self.push(out, Op::MeanRows(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Mat::scalar(s), Op::Sum(x), rg)
    }

    /// Mean over rows of `-log softmax(logits)[row, target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per logit row");
        let logp = lv.log_softmax_rows();
        let loss = -targets.iter().enumerate().map(|(r, &t)| logp.get(r, t)).sum::<f64>() / targets.len() as f64;
        let probs = logp.map(f64::exp);
        let rg = self.rg(logits);
        self.push(Mat::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, rg)
    }

    /// Mean over rows of `KL(softmax(logits) || q)` where `log_q` holds
    /// constant row-wise log-probabilities.
    pub fn kl_to_const(&mut self, logits: Var, log_q: &Mat) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.shape(), log_q.shape(), "kl shape mismatch");
        let logp = lv.log_softmax_rows();
        let probs = logp.map(f64::exp);
        let log_ratio = logp.zip_map(log_q, |a, b| a - b);
        let n = lv.rows() as f64;
        let value = probs.data().iter().zip(log_ratio.data()).map(|(p, l)| p * l).sum::<f64>() / n;
        let rg = self.rg(logits);
        self.push(Mat::scalar(value), Op::Kl { logits, probs, log_ratio }, rg)
    }

    /// Reverse pass from the scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Gradients { grads };
        }
        let shape = self.nodes[root.0].value.shape();
        grads[root.0] = Some(Mat::filled(shape.0, shape.1, 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul_t(self.value(*b));
                    self.accum(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.value(*a).t_matmul(g);
                    self.accum(grads, *b, gb);
                }
            }
            Op::MatMulT(a, b) => {
                // c = a b^T ; da = g b ; db = g^T a
                if self.rg(*a) {
                    let ga = g.matmul(self.value(*b));
                    self.accum(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = g.t_matmul(self.value(*a));
                    self.accum(grads, *b, gb);
                }
            }
            Op::Transpose(a) => self.accum(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    self.accum(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accum(grads, *b, gb);
                }
            }
            Op::AddRow(a, b) => {
                self.accum(grads, *a, g.clone());
                if self.rg(*b) {
                    let mut gb = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accum(grads, *b, gb);
                }
            }
            Op::AddConst(a) => self.accum(grads, *a, g.clone()),
            Op::Scale(a, s) => self.accum(grads, *a, g.scale(*s)),
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item();
                if self.rg(*a) {
                    self.accum(grads, *a, g.scale(sv));
                }
                if self.rg(*s) {
                    let d: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    self.accum(grads, *s, Mat::scalar(d));
                }
            }
            Op::Gelu(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| {
                    let u = GELU_C * (x + 0.044715 * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                self.accum(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(&node.value, |gy, y| gy * (1.0 - y * y));
                self.accum(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |gy, y| gy * y * (1.0 - y));
                self.accum(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| if x > 0.0 { gy } else { 0.0 });
                self.accum(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, gy), yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gy - dot);
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = self.value(*gamma);
                let (rows, cols) = xhat.shape();
                if self.rg(*gamma) {
                    let mut gg = Mat::zeros(1, cols);
                    for r in 0..rows {
                        for ((o, gy), xh) in gg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += gy * xh;
                        }
                    }
                    self.accum(grads, *gamma, gg);
                }
                if self.rg(*beta) {
                    let mut gb = Mat::zeros(1, cols);
                    for r in 0..rows {
                        for (o, gy) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gy;
                        }
                    }
                    self.accum(grads, *beta, gb);
                }
                if self.rg(*x) {
                    let mut gx = Mat::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let dxh: Vec<f64> = g.row(r).iter().zip(gam.data()).map(|(a, b)| a * b).collect();
                        let m1 = dxh.iter().sum::<f64>() / n;
                        let m2 = dxh.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, d), xh) in gx.row_mut(r).iter_mut().zip(&dxh).zip(xhat.row(r)) {
                            *o = inv_std[r] * (d - m1 - xh * m2);
                        }
                    }
                    self.accum(grads, *x, gx);
                }
            }
            Op::Gather { table, idx } => {
                let t = self.value(*table);
                let mut gt = Mat::zeros(t.rows(), t.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accum(grads, *table, gt);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut gx = Mat::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accum(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.rg(*p) {
                        let mut gp = Mat::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        self.accum(grads, *p, gp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (h, w) = self.value(*p).shape();
                    if self.rg(*p) {
                        let gp = Mat::from_vec(h, w, g.data()[off * w..(off + h) * w].to_vec());
                        self.accum(grads, *p, gp);
                    }
                    off += h;
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let n = xv.rows() as f64;
                let mut gx = Mat::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    for (o, v) in gx.row_mut(r).iter_mut().zip(g.data()) {
                        *o = v / n;
                    }
                }
                self.accum(grads, *x, gx);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accum(grads, *x, Mat::filled(r, c, g.item()));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let up = g.item() / targets.len() as f64;
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let v = gl.get(r, t);
                    gl.set(r, t, v - 1.0);
                }
                gl.data_mut().iter_mut().for_each(|v| *v *= up);
                self.accum(grads, *logits, gl);
            }
            Op::Kl { logits, probs, log_ratio } => {
                let n = probs.rows() as f64;
                let up = g.item() / n;
                let mut gl = Mat::zeros(probs.rows(), probs.cols());
                for r in 0..probs.rows() {
                    let f: f64 = probs.row(r).iter().zip(log_ratio.row(r)).map(|(p, l)| p * l).sum();
                    for ((o, p), l) in gl.row_mut(r).iter_mut().zip(probs.row(r)).zip(log_ratio.row(r)) {
                        *o = up * p * (l - f);
                    }
                }
                self.accum(grads, *logits, gl);
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

/// Result of a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` w.r.t. every entry of `x`.
    fn numeric_grad(x: &Mat, f: &dyn Fn(&Mat) -> f64) -> Mat {
        let h = 1e-6;
        let mut g = Mat::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check(x: &Mat, build: &dyn Fn(&mut Tape, Var) -> Var) {
        let f = |m: &Mat| {
            let mut t = Tape::no_grad();
            let v = t.constant(m.clone());
            let out = build(&mut t, v);
            t.value(out).item()
        };
        let mut t = Tape::new();
        let v = t.param(Arc::new(x.clone()));
        let out = build(&mut t, v);
        let grads = t.backward(out);
        let analytic = grads.get(v).cloned().unwrap_or_else(|| Mat::zeros(x.rows(), x.cols()));
        let numeric = numeric_grad(x, &f);
        for i in 0..x.len() {
            let a = analytic.data()[i];
            let n = numeric.data()[i];
            let err = (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
            assert!(err < 1e-5, "entry {i}: analytic {a} numeric {n}");
        }
    }

    #[test]
    fn elementwise_and_matmul_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Mat::randn(3, 4, 1.0, &mut rng);
        let w = Mat::randn(4, 2, 1.0, &mut rng);
        let r = Mat::randn(1, 2, 1.0, &mut rng);
        check(&x, &|t, v| {
            let w = t.constant(w.clone());
            let b = t.constant(r.clone());
            let y = t.matmul(v, w);
            let y = t.add_row(y, b);
            let y = t.gelu(y);
            let z = t.tanh(y);
            let s = t.sigmoid(z);
            let m = t.mul(s, y);
            t.sum(m)
        });
        check(&x, &|t, v| {
            let vt = t.transpose(v);
            let p = t.matmul(v, vt);
            let q = t.matmul_t(v, v);
            let d = t.sub(p, q);
            let e = t.add(p, d);
            let e = t.scale(e, 0.3);
            t.sum(e)
        });
    }

    #[test]
    fn softmax_layernorm_and_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Mat::randn(3, 5, 1.0, &mut rng);
        let gamma = Mat::randn(1, 5, 1.0, &mut rng);
        let beta = Mat::randn(1, 5, 1.0, &mut rng);
        let proj = Mat::randn(5, 5, 1.0, &mut rng);
        check(&x, &|t, v| {
            let g = t.constant(gamma.clone());
            let b = t.constant(beta.clone());
            let p = t.constant(proj.clone());
            let y = t.layer_norm(v, g, b);
            let y = t.matmul(y, p);
            let s = t.softmax_rows(y);
            let s = t.mul(s, y);
            t.sum(s)
        });
        let log_q = Mat::randn(3, 5, 1.0, &mut rng).log_softmax_rows();
        check(&x, &|t, v| {
            let ce = t.cross_entropy(v, &[1, 4, 0]);
            let kl = t.kl_to_const(v, &log_q);
            t.add(ce, kl)
        });
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Mat::randn(4, 6, 1.0, &mut rng);
        let weights = Mat::randn(5, 6, 1.0, &mut rng);
        check(&x, &|t, v| {
            let a = t.slice_cols(v, 1, 3);
            let b = t.slice_cols(v, 4, 2);
            let c = t.concat_cols(&[b, a, b]);
            let rows = t.gather(v, &[2, 0, 2]);
            let stacked = t.concat_rows(&[rows, v]);
            let m = t.mean_rows(stacked);
            let w = t.constant(weights.clone());
            let mw = t.matmul_t(m, w);
            let s = t.sum(mw);
            let cm = t.mean_rows(c);
            let cs = t.sum(cm);
            let sc = t.mul_scalar(cm, s);
            let out = t.sum(sc);
            t.add(out, cs)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Mat::scalar(2.0));
        let p = t.param(Arc::new(Mat::scalar(3.0)));
        let y = t.mul(c, p);
        let grads = t.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().item(), 2.0);
    }
}
