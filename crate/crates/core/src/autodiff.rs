//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node; calling
//! [`Tape::backward`] on a scalar output accumulates gradients for every
//! node, leaves included. The op set is exactly what the encoder-decoder
//! model needs. Everything runs in double precision with a fixed sequential
//! evaluation order, so repeated runs are bit-identical.

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `dst += a @ b`
fn matmul_acc(dst: &mut Matrix, a: &Matrix, b: &Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!((dst.rows, dst.cols), (a.rows, b.cols));
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = dst.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

/// `dst += a @ b^T`
fn matmul_nt_acc(dst: &mut Matrix, a: &Matrix, b: &Matrix) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!((dst.rows, dst.cols), (a.rows, b.rows));
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = dst.row_mut(i);
        for (k, o) in orow.iter_mut().enumerate() {
            let brow = b.row(k);
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o += acc;
        }
    }
}

/// `dst += a^T @ b`
fn matmul_tn_acc(dst: &mut Matrix, a: &Matrix, b: &Matrix) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!((dst.rows, dst.cols), (a.cols, b.cols));
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let brow = b.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            let orow = &mut dst.data[k * n..(k + 1) * n];
            for (o, &bij) in orow.iter_mut().zip(brow) {
                *o += aik * bij;
            }
        }
    }
}

fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// tanh-form GELU. Smooth everywhere, which keeps finite-difference
/// gradient checks clean.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

const LN_EPS: f64 = 1e-5;

/// Node index on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// a @ b
    MatMul(Var, Var),
    /// a @ b^T
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// a[m,n] + row b[1,n] broadcast over rows
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    /// a + constant matrix (attention masks)
    AddConst(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
    },
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    /// rows of a table selected by index; gradient scatters back
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    /// -sum_i logp[i, targets[i]] as a 1x1 scalar
    NllSum {
        logp: Var,
        targets: Vec<usize>,
    },
    /// sum of 1x1 scalars
    AddN(Vec<Var>),
}

struct TapeNode {
    value: Matrix,
    grad: Matrix,
    op: Op,
}

/// Records a forward computation; dropped after each step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let grad = Matrix::zeros(value.rows, value.cols);
        self.nodes.push(TapeNode { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].grad
    }

    pub fn take_grad(&mut self, v: Var) -> Matrix {
        std::mem::replace(&mut self.nodes[v.0].grad, Matrix::zeros(0, 0))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let m = &self.nodes[v.0].value;
        (m.rows, m.cols)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let mut out = Matrix::zeros(self.shape(a).0, self.shape(b).1);
        matmul_acc(&mut out, &self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a @ b^T`, with no materialized transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let mut out = Matrix::zeros(self.shape(a).0, self.shape(b).0);
        matmul_nt_acc(&mut out, &self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        debug_assert_eq!((av.rows, av.cols), (bv.rows, bv.cols));
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let out = Matrix::from_vec(av.rows, av.cols, data);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        debug_assert_eq!(bv.rows, 1);
        debug_assert_eq!(av.cols, bv.cols);
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, &x) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += x;
            }
        }
        self.push(out, Op::AddRowBroadcast(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data.iter().map(|x| x * c).collect();
        let out = Matrix::from_vec(av.rows, av.cols, data);
        self.push(out, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data.iter().map(|&x| gelu(x)).collect();
        let out = Matrix::from_vec(av.rows, av.cols, data);
        self.push(out, Op::Gelu(a))
    }

    /// Adds a constant matrix (not a differentiable input).
    pub fn add_const(&mut self, a: Var, constant: &Matrix) -> Var {
        let av = &self.nodes[a.0].value;
        debug_assert_eq!((av.rows, av.cols), (constant.rows, constant.cols));
        let data = av
            .data
            .iter()
            .zip(&constant.data)
            .map(|(x, y)| x + y)
            .collect();
        let out = Matrix::from_vec(av.rows, av.cols, data);
        self.push(out, Op::AddConst(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let mut out = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            softmax_row_into(av.row(r), &mut out.data[r * av.cols..(r + 1) * av.cols]);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let mut out = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            let row = av.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in out.row_mut(r).iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Row-wise layer normalization with learned gain and bias (both `1xn`).
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gain.0].value;
        let bv = &self.nodes[bias.0].value;
        debug_assert_eq!(gv.cols, xv.cols);
        debug_assert_eq!(bv.cols, xv.cols);
        let n = xv.cols as f64;
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = gv.data[c] * (row[c] - mean) * inv_std + bv.data[c];
            }
        }
        self.push(out, Op::LayerNormRows { x, gain, bias })
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        debug_assert_eq!(av.cols, bv.cols);
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(&av.data);
        data.extend_from_slice(&bv.data);
        let out = Matrix::from_vec(av.rows + bv.rows, av.cols, data);
        self.push(out, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        debug_assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let total_cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, total_cols);
        let mut offset = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            debug_assert_eq!(pv.rows, rows);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        debug_assert!(start + len <= xv.cols);
        let mut out = Matrix::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = &self.nodes[table.0].value;
        let mut out = Matrix::zeros(ids.len(), tv.cols);
        for (r, &id) in ids.iter().enumerate() {
            debug_assert!(id < tv.rows);
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// `-sum_i logp[i, targets[i]]` as a `1x1` scalar.
    pub fn nll_sum(&mut self, logp: Var, targets: &[usize]) -> Var {
        let lv = &self.nodes[logp.0].value;
        debug_assert_eq!(lv.rows, targets.len());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            debug_assert!(t < lv.cols);
            total -= lv.get(r, t);
        }
        let out = Matrix::from_vec(1, 1, vec![total]);
        self.push(
            out,
            Op::NllSum {
                logp,
                targets: targets.to_vec(),
            },
        )
    }

    /// Sum of `1x1` scalars.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        let total: f64 = parts.iter().map(|&p| self.nodes[p.0].value.data[0]).sum();
        let out = Matrix::from_vec(1, 1, vec![total]);
        self.push(out, Op::AddN(parts.to_vec()))
    }

    /// Accumulates `d loss / d node` for every node. `loss` must be `1x1`.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.shape(loss), (1, 1), "backward requires a scalar loss");
        self.nodes[loss.0].grad.data[0] = 1.0;
        for idx in (0..=loss.0).rev() {
            // Split so the node's own grad can be read while inputs are written.
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &mut rest[0];
            let grad = &node.grad;
            let value = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    debug_assert!(a.0 < idx && b.0 < idx);
                    if a.0 == b.0 {
                        // dA = dC @ A^T + A^T'... not needed: the model never
                        // multiplies a node by itself.
                        unreachable!("matmul with aliased inputs");
                    }
                    let (first, second) = split_two(before, a.0, b.0);
                    matmul_nt_acc(&mut first.grad, grad, &second.value);
                    matmul_tn_acc(&mut second.grad, &first.value, grad);
                }
                Op::MatMulNT(a, b) => {
                    debug_assert!(a.0 != b.0);
                    let (first, second) = split_two(before, a.0, b.0);
                    // C = A B^T: dA += dC @ B ; dB += dC^T @ A
                    matmul_acc(&mut first.grad, grad, &second.value);
                    matmul_tn_acc(&mut second.grad, grad, &first.value);
                }
                Op::Add(a, b) => {
                    if a.0 == b.0 {
                        for (g, &d) in before[a.0].grad.data.iter_mut().zip(&grad.data) {
                            *g += 2.0 * d;
                        }
                    } else {
                        let (first, second) = split_two(before, a.0, b.0);
                        for (g, &d) in first.grad.data.iter_mut().zip(&grad.data) {
                            *g += d;
                        }
                        for (g, &d) in second.grad.data.iter_mut().zip(&grad.data) {
                            *g += d;
                        }
                    }
                }
                Op::AddRowBroadcast(a, b) => {
                    let (first, second) = split_two(before, a.0, b.0);
                    for (g, &d) in first.grad.data.iter_mut().zip(&grad.data) {
                        *g += d;
                    }
                    for r in 0..grad.rows {
                        for (g, &d) in second.grad.data.iter_mut().zip(grad.row(r)) {
                            *g += d;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    for (g, &d) in before[a.0].grad.data.iter_mut().zip(&grad.data) {
                        *g += c * d;
                    }
                }
                Op::Gelu(a) => {
                    let node_a = &mut before[a.0];
                    for ((g, &d), &x) in node_a
                        .grad
                        .data
                        .iter_mut()
                        .zip(&grad.data)
                        .zip(&node_a.value.data)
                    {
                        *g += d * gelu_derivative(x);
                    }
                }
                Op::AddConst(a) => {
                    for (g, &d) in before[a.0].grad.data.iter_mut().zip(&grad.data) {
                        *g += d;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let target = &mut before[a.0].grad;
                    for r in 0..value.rows {
                        let p = value.row(r);
                        let d = grad.row(r);
                        let dot: f64 = p.iter().zip(d).map(|(&pi, &di)| pi * di).sum();
                        for (g, (&pi, &di)) in target.row_mut(r).iter_mut().zip(p.iter().zip(d)) {
                            *g += pi * (di - dot);
                        }
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let target = &mut before[a.0].grad;
                    for r in 0..value.rows {
                        let y = value.row(r);
                        let d = grad.row(r);
                        let dsum: f64 = d.iter().sum();
                        for (g, (&yi, &di)) in target.row_mut(r).iter_mut().zip(y.iter().zip(d)) {
                            *g += di - yi.exp() * dsum;
                        }
                    }
                }
                Op::LayerNormRows { x, gain, bias } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let n = before[x.0].value.cols;
                    let nf = n as f64;
                    for r in 0..grad.rows {
                        // Recompute the row statistics; cheaper than caching.
                        let (mean, inv_std) = {
                            let row = before[x.0].value.row(r);
                            let mean = row.iter().sum::<f64>() / nf;
                            let var =
                                row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                            (mean, 1.0 / (var + LN_EPS).sqrt())
                        };
                        let drow = grad.row(r).to_vec();
                        let xrow = before[x.0].value.row(r).to_vec();
                        let grow = before[gain.0].value.data.clone();
                        // d gain, d bias
                        for c in 0..n {
                            let xhat = (xrow[c] - mean) * inv_std;
                            before[gain.0].grad.data[c] += drow[c] * xhat;
                            before[bias.0].grad.data[c] += drow[c];
                        }
                        // d x
                        let mut dxhat = vec![0.0; n];
                        for c in 0..n {
                            dxhat[c] = drow[c] * grow[c];
                        }
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / nf;
                        let mean_dxhat_xhat: f64 = (0..n)
                            .map(|c| dxhat[c] * (xrow[c] - mean) * inv_std)
                            .sum::<f64>()
                            / nf;
                        let target = before[x.0].grad.row_mut(r);
                        for c in 0..n {
                            let xhat = (xrow[c] - mean) * inv_std;
                            target[c] += inv_std * (dxhat[c] - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                }
                Op::ConcatRows(a, b) => {
                    let (first, second) = split_two(before, a.0, b.0);
                    let split = first.grad.len();
                    for (g, &d) in first.grad.data.iter_mut().zip(&grad.data[..split]) {
                        *g += d;
                    }
                    for (g, &d) in second.grad.data.iter_mut().zip(&grad.data[split..]) {
                        *g += d;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = before[p.0].grad.cols;
                        for r in 0..grad.rows {
                            let drow = &grad.row(r)[offset..offset + cols];
                            for (g, &d) in before[p.0].grad.row_mut(r).iter_mut().zip(drow) {
                                *g += d;
                            }
                        }
                        offset += cols;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    let len = grad.cols;
                    for r in 0..grad.rows {
                        let drow = grad.row(r);
                        let target = &mut before[x.0].grad.row_mut(r)[start..start + len];
                        for (g, &d) in target.iter_mut().zip(drow) {
                            *g += d;
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    let target = &mut before[table.0].grad;
                    for (r, &id) in ids.iter().enumerate() {
                        let drow = grad.row(r);
                        for (g, &d) in target.row_mut(id).iter_mut().zip(drow) {
                            *g += d;
                        }
                    }
                }
                Op::NllSum { logp, targets } => {
                    let d = grad.data[0];
                    let target = &mut before[logp.0].grad;
                    for (r, &t) in targets.iter().enumerate() {
                        target.row_mut(r)[t] -= d;
                    }
                }
                Op::AddN(parts) => {
                    let d = grad.data[0];
                    for &p in parts {
                        before[p.0].grad.data[0] += d;
                    }
                }
            }
        }
    }
}

/// Disjoint mutable borrows of two distinct node indices.
fn split_two(nodes: &mut [TapeNode], a: usize, b: usize) -> (&mut TapeNode, &mut TapeNode) {
    debug_assert_ne!(a, b);
    if a < b {
        let (lo, hi) = nodes.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = nodes.split_at_mut(a);
        let (x, y) = (&mut hi[0], &mut lo[b]);
        (x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences on an arbitrary scalar function of one
    /// leaf matrix.
    fn finite_diff<F>(input: &Matrix, f: F) -> Matrix
    where
        F: Fn(&Matrix) -> f64,
    {
        let h = 1e-6;
        let mut grad = Matrix::zeros(input.rows, input.cols);
        for i in 0..input.data.len() {
            let mut plus = input.clone();
            plus.data[i] += h;
            let mut minus = input.clone();
            minus.data[i] -= h;
            grad.data[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grad
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols));
        for (x, y) in a.data.iter().zip(&b.data) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            assert!(
                (x - y).abs() / denom < tol,
                "gradient mismatch: analytic={x}, numeric={y}"
            );
        }
    }

    fn test_input(rows: usize, cols: usize, offset: f64) -> Matrix {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 + offset) * 0.7).sin() * 0.8)
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Sums all entries of a matrix as a scalar so any op output can become
    /// a loss; sum-weighting by a fixed pattern exercises off-diagonal grads.
    fn weighted_sum(tape: &mut Tape, v: Var) -> Var {
        let m = tape.value(v).clone();
        let weights: Vec<f64> = (0..m.len())
            .map(|i| ((i as f64) * 0.3).cos() + 1.5)
            .collect();
        let w = tape.leaf(Matrix::from_vec(m.cols, 1, {
            // Reduce columns first with a fixed vector, then rows.
            (0..m.cols).map(|c| weights[c]).collect()
        }));
        let reduced = tape.matmul(v, w); // [rows, 1]
        let ones = tape.leaf(Matrix::from_vec(1, m.rows, vec![1.0; m.rows]));
        tape.matmul(ones, reduced) // [1,1]
    }

    fn check_unary<G>(rows: usize, cols: usize, build: G)
    where
        G: Fn(&mut Tape, Var) -> Var,
    {
        let input = test_input(rows, cols, 1.0);
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let y = build(&mut tape, x);
        let loss = weighted_sum(&mut tape, y);
        tape.backward(loss);
        let analytic = tape.grad(x).clone();

        let numeric = finite_diff(&input, |m| {
            let mut t = Tape::new();
            let x = t.leaf(m.clone());
            let y = build(&mut t, x);
            let loss = weighted_sum(&mut t, y);
            t.value(loss).data[0]
        });
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn matmul_gradients() {
        let a0 = test_input(3, 4, 0.0);
        let b0 = test_input(4, 2, 5.0);
        let mut tape = Tape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.leaf(b0.clone());
        let y = tape.matmul(a, b);
        let loss = weighted_sum(&mut tape, y);
        tape.backward(loss);

        let ga = finite_diff(&a0, |m| {
            let mut t = Tape::new();
            let a = t.leaf(m.clone());
            let b = t.leaf(b0.clone());
            let y = t.matmul(a, b);
            let l = weighted_sum(&mut t, y);
            t.value(l).data[0]
        });
        let gb = finite_diff(&b0, |m| {
            let mut t = Tape::new();
            let a = t.leaf(a0.clone());
            let b = t.leaf(m.clone());
            let y = t.matmul(a, b);
            let l = weighted_sum(&mut t, y);
            t.value(l).data[0]
        });
        assert_close(tape.grad(a), &ga, 1e-6);
        assert_close(tape.grad(b), &gb, 1e-6);
    }

    #[test]
    fn matmul_nt_gradients() {
        let a0 = test_input(3, 4, 0.0);
        let b0 = test_input(5, 4, 2.0);
        let mut tape = Tape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.leaf(b0.clone());
        let y = tape.matmul_nt(a, b);
        assert_eq!((tape.value(y).rows, tape.value(y).cols), (3, 5));
        let loss = weighted_sum(&mut tape, y);
        tape.backward(loss);

        let gb = finite_diff(&b0, |m| {
            let mut t = Tape::new();
            let a = t.leaf(a0.clone());
            let b = t.leaf(m.clone());
            let y = t.matmul_nt(a, b);
            let l = weighted_sum(&mut t, y);
            t.value(l).data[0]
        });
        assert_close(tape.grad(b), &gb, 1e-6);
    }

    #[test]
    fn softmax_gradients() {
        check_unary(3, 5, |t, x| t.softmax_rows(x));
    }

    #[test]
    fn log_softmax_gradients() {
        check_unary(3, 5, |t, x| t.log_softmax_rows(x));
    }

    #[test]
    fn gelu_and_scale_gradients() {
        check_unary(4, 3, |t, x| {
            let r = t.gelu(x);
            t.scale(r, 0.37)
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let gain0 = test_input(1, 6, 3.0);
        let bias0 = test_input(1, 6, 4.0);
        check_unary(3, 6, |t, x| {
            let g = t.leaf(gain0.clone());
            let b = t.leaf(bias0.clone());
            t.layer_norm_rows(x, g, b)
        });
        // Gain and bias gradients.
        let x0 = test_input(3, 6, 1.0);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let g = tape.leaf(gain0.clone());
        let b = tape.leaf(bias0.clone());
        let y = tape.layer_norm_rows(x, g, b);
        let loss = weighted_sum(&mut tape, y);
        tape.backward(loss);
        let gg = finite_diff(&gain0, |m| {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone());
            let g = t.leaf(m.clone());
            let b = t.leaf(bias0.clone());
            let y = t.layer_norm_rows(x, g, b);
            let l = weighted_sum(&mut t, y);
            t.value(l).data[0]
        });
        assert_close(tape.grad(g), &gg, 1e-6);
    }

    #[test]
    fn concat_slice_gather_gradients() {
        check_unary(4, 6, |t, x| {
            let left = t.slice_cols(x, 0, 3);
            let right = t.slice_cols(x, 3, 3);
            let swapped = t.concat_cols(&[right, left]);
            let top = t.gather_rows(swapped, &[0, 2, 2, 1]);
            t.concat_rows(top, swapped)
        });
    }

    #[test]
    fn nll_and_broadcast_gradients() {
        let bias0 = test_input(1, 5, 9.0);
        let x0 = test_input(3, 5, 0.0);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let b = tape.leaf(bias0.clone());
        let shifted = tape.add_row_broadcast(x, b);
        let logp = tape.log_softmax_rows(shifted);
        let loss = tape.nll_sum(logp, &[1, 4, 0]);
        tape.backward(loss);

        let gx = finite_diff(&x0, |m| {
            let mut t = Tape::new();
            let x = t.leaf(m.clone());
            let b = t.leaf(bias0.clone());
            let s = t.add_row_broadcast(x, b);
            let lp = t.log_softmax_rows(s);
            let l = t.nll_sum(lp, &[1, 4, 0]);
            t.value(l).data[0]
        });
        assert_close(tape.grad(x), &gx, 1e-6);
        let gb = finite_diff(&bias0, |m| {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone());
            let b = t.leaf(m.clone());
            let s = t.add_row_broadcast(x, b);
            let lp = t.log_softmax_rows(s);
            let l = t.nll_sum(lp, &[1, 4, 0]);
            t.value(l).data[0]
        });
        assert_close(tape.grad(b), &gb, 1e-6);
    }

    #[test]
    fn reused_node_accumulates_gradient() {
        // x used twice: y = x + x.
        let x0 = test_input(2, 2, 0.5);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = tape.add(x, x);
        let loss = weighted_sum(&mut tape, y);
        tape.backward(loss);
        let gx = finite_diff(&x0, |m| {
            let mut t = Tape::new();
            let x = t.leaf(m.clone());
            let y = t.add(x, x);
            let l = weighted_sum(&mut t, y);
            t.value(l).data[0]
        });
        assert_close(tape.grad(x), &gx, 1e-6);
    }

    #[test]
    fn central_differences_are_exact_for_linear_functions() {
        // A linear map has no curvature, so the central difference equals
        // the analytic gradient up to roundoff.
        let x0 = test_input(3, 3, 0.2);
        let w0 = test_input(3, 2, 7.0);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let w = tape.leaf(w0.clone());
        let y = tape.matmul(x, w);
        let loss = weighted_sum(&mut tape, y);
        tape.backward(loss);
        let h = 1e-4;
        for i in 0..w0.data.len() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let x = t.leaf(x0.clone());
                let mut w_shift = w0.clone();
                w_shift.data[i] += delta;
                let w = t.leaf(w_shift);
                let y = t.matmul(x, w);
                let l = weighted_sum(&mut t, y);
                t.value(l).data[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = tape.grad(w).data[i];
            assert!(
                (numeric - analytic).abs() < 1e-10,
                "linear fd must be exact: {numeric} vs {analytic}"
            );
        }
    }

    #[test]
    fn masked_softmax_ignores_masked_entries() {
        let x0 = test_input(3, 3, 2.0);
        let mut mask = Matrix::zeros(3, 3);
        for r in 0..3 {
            for c in 0..3 {
                if c > r {
                    mask.set(r, c, -1e30);
                }
            }
        }
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let masked = tape.add_const(x, &mask);
        let probs = tape.softmax_rows(masked);
        let p = tape.value(probs);
        assert_eq!(p.get(0, 1), 0.0);
        assert_eq!(p.get(0, 2), 0.0);
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        let loss = weighted_sum(&mut tape, probs);
        tape.backward(loss);
        for g in &tape.grad(x).data {
            assert!(g.is_finite());
        }
    }
}
