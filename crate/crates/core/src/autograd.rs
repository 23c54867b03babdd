//! Minimal reverse-mode automatic differentiation over dense row-major f64
//! matrices.
//!
//! A [`Tape`] records an eagerly-evaluated expression graph; [`Tape::backward`]
//! replays it in reverse, accumulating gradients per node. The op set is
//! exactly what the denoising transformer needs; everything is sequential and
//! deterministic.

use std::sync::Arc;

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// C = A B.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul inner dims");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// C = A B^T, with B stored row-major as [n, k].
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dims");
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            // Independent accumulator lanes so the reduction vectorizes.
            let mut acc = [0.0f64; 8];
            let chunks = arow.len() / 8;
            for c in 0..chunks {
                let x = &arow[c * 8..c * 8 + 8];
                let y = &brow[c * 8..c * 8 + 8];
                for l in 0..8 {
                    acc[l] += x[l] * y[l];
                }
            }
            let mut dot = acc.iter().sum::<f64>();
            for k in chunks * 8..arow.len() {
                dot += arow[k] * brow[k];
            }
            out.data[i * b.rows + j] = dot;
        }
    }
    out
}

/// C = A^T B, with A stored row-major as [m, k].
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dims");
    let mut out = Tensor::zeros(a.cols, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let brow = b.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            let orow = &mut out.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    // tanh approximation
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    MatmulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// X [m, n] plus a broadcast row [1, n].
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    /// Per-row pairwise rotation by fixed angles; cos/sin are [m, n/2].
    Rotary { x: NodeId, cos: Arc<Tensor>, sin: Arc<Tensor> },
    ConcatRows(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize, len: usize },
    SelectRow(NodeId, usize),
    /// Mean of |x| over all elements, a [1, 1] scalar.
    MeanAbs(NodeId),
    /// alpha * a + beta * b, elementwise.
    AddScaled(NodeId, NodeId, f64, f64),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Expression recorder. Values are computed eagerly; `backward` walks the
/// node list in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Matmul(a, b)
            | Op::MatmulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatRows(a, b)
            | Op::AddScaled(a, b, _, _) => self.nodes[*a].needs_grad || self.nodes[*b].needs_grad,
            Op::Scale(x, _)
            | Op::Gelu(x)
            | Op::SoftmaxRows(x)
            | Op::Rotary { x, .. }
            | Op::SliceCols { x, .. }
            | Op::SelectRow(x, _)
            | Op::MeanAbs(x) => self.nodes[*x].needs_grad,
            Op::LayerNorm { x, gain, bias } => {
                self.nodes[*x].needs_grad
                    || self.nodes[*gain].needs_grad
                    || self.nodes[*bias].needs_grad
            }
            Op::ConcatCols(parts) => parts.iter().any(|&p| self.nodes[p].needs_grad),
        };
        self.nodes.push(Node { value: Arc::new(value), op, needs_grad });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Non-differentiable input; backward never flows into it.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Differentiable leaf owning its tensor.
    pub fn var(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { value: Arc::new(t), op: Op::Leaf, needs_grad: true });
        self.nodes.len() - 1
    }

    /// Leaf that shares storage with the caller (model parameters);
    /// gradients flow into it, unlike [`Tape::constant`].
    pub fn leaf_shared(&mut self, t: Arc<Tensor>) -> NodeId {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: true });
        self.nodes.len() - 1
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::Matmul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul_nt(self.value(a), self.value(b));
        self.push(v, Op::MatmulNT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols));
        let data = ta.data.iter().zip(tb.data.iter()).map(|(x, y)| x + y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols));
        let data = ta.data.iter().zip(tb.data.iter()).map(|(x, y)| x - y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let (tx, tr) = (self.value(x), self.value(row));
        assert_eq!(tr.rows, 1);
        assert_eq!(tx.cols, tr.cols);
        let mut v = Tensor::zeros(tx.rows, tx.cols);
        for i in 0..tx.rows {
            for j in 0..tx.cols {
                v.data[i * tx.cols + j] = tx.data[i * tx.cols + j] + tr.data[j];
            }
        }
        self.push(v, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let tx = self.value(x);
        let v = Tensor::from_vec(tx.rows, tx.cols, tx.data.iter().map(|a| a * s).collect());
        self.push(v, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let v = Tensor::from_vec(tx.rows, tx.cols, tx.data.iter().map(|&a| gelu(a)).collect());
        self.push(v, Op::Gelu(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let mut v = Tensor::zeros(tx.rows, tx.cols);
        for i in 0..tx.rows {
            let row = tx.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &a) in row.iter().enumerate() {
                let e = (a - m).exp();
                v.data[i * tx.cols + j] = e;
                sum += e;
            }
            for j in 0..tx.cols {
                v.data[i * tx.cols + j] /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(x))
    }

    /// Row-wise layer normalization with learned gain and bias (both [1, n]).
    #[allow(clippy::needless_range_loop)]
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        assert_eq!(tg.rows, 1);
        assert_eq!(tb.rows, 1);
        assert_eq!(tx.cols, tg.cols);
        assert_eq!(tx.cols, tb.cols);
        let n = tx.cols as f64;
        let mut v = Tensor::zeros(tx.rows, tx.cols);
        for i in 0..tx.rows {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..tx.cols {
                let xhat = (row[j] - mean) * inv;
                v.data[i * tx.cols + j] = xhat * tg.data[j] + tb.data[j];
            }
        }
        self.push(v, Op::LayerNorm { x, gain, bias })
    }

    /// Rotates feature pairs `(2j, 2j+1)` of each row by the fixed angles in
    /// `cos`/`sin` (shape [rows, cols/2]). An orthogonal, position-dependent
    /// linear map; this is how rotary position information enters attention.
    pub fn rotary(&mut self, x: NodeId, cos: Arc<Tensor>, sin: Arc<Tensor>) -> NodeId {
        let tx = self.value(x);
        let half = tx.cols / 2;
        assert_eq!(tx.cols % 2, 0);
        assert_eq!((cos.rows, cos.cols), (tx.rows, half));
        assert_eq!((sin.rows, sin.cols), (tx.rows, half));
        let mut v = Tensor::zeros(tx.rows, tx.cols);
        for i in 0..tx.rows {
            for j in 0..half {
                let c = cos.data[i * half + j];
                let s = sin.data[i * half + j];
                let x0 = tx.data[i * tx.cols + 2 * j];
                let x1 = tx.data[i * tx.cols + 2 * j + 1];
                v.data[i * tx.cols + 2 * j] = x0 * c - x1 * s;
                v.data[i * tx.cols + 2 * j + 1] = x0 * s + x1 * c;
            }
        }
        self.push(v, Op::Rotary { x, cos, sin })
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.cols);
        let mut data = Vec::with_capacity((ta.rows + tb.rows) * ta.cols);
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        let v = Tensor::from_vec(ta.rows + tb.rows, ta.cols, data);
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let tp = self.value(p);
            assert_eq!(tp.rows, rows);
            for i in 0..rows {
                v.data[i * total + off..i * total + off + tp.cols].copy_from_slice(tp.row(i));
            }
            off += tp.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let tx = self.value(x);
        assert!(start + len <= tx.cols);
        let mut v = Tensor::zeros(tx.rows, len);
        for i in 0..tx.rows {
            v.data[i * len..(i + 1) * len].copy_from_slice(&tx.row(i)[start..start + len]);
        }
        self.push(v, Op::SliceCols { x, start, len })
    }

    pub fn select_row(&mut self, x: NodeId, row: usize) -> NodeId {
        let tx = self.value(x);
        assert!(row < tx.rows);
        let v = Tensor::from_vec(1, tx.cols, tx.row(row).to_vec());
        self.push(v, Op::SelectRow(x, row))
    }

    pub fn mean_abs(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let m = tx.data.iter().map(|a| a.abs()).sum::<f64>() / tx.numel() as f64;
        let v = Tensor::from_vec(1, 1, vec![m]);
        self.push(v, Op::MeanAbs(x))
    }

    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, alpha: f64, beta: f64) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols));
        let data = ta
            .data
            .iter()
            .zip(tb.data.iter())
            .map(|(x, y)| alpha * x + beta * y)
            .collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::AddScaled(a, b, alpha, beta))
    }

    /// X W + b convenience.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Reverse pass from a scalar node; returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss].needs_grad {
            grads[loss] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        }

        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(grad);
                    continue;
                }
                Op::Matmul(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], matmul_nt(&grad, tb));
                    }
                    if self.nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], matmul_tn(ta, &grad));
                    }
                }
                Op::MatmulNT(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], matmul(&grad, tb));
                    }
                    if self.nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], matmul_tn(&grad, ta));
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[*a].needs_grad { accumulate(&mut grads[*a], grad.clone()); }
                    if self.nodes[*b].needs_grad { accumulate(&mut grads[*b], grad); }
                }
                Op::Sub(a, b) => {
                    let neg = Tensor::from_vec(grad.rows, grad.cols, grad.data.iter().map(|v| -v).collect());
                    if self.nodes[*a].needs_grad { accumulate(&mut grads[*a], grad); }
                    if self.nodes[*b].needs_grad { accumulate(&mut grads[*b], neg); }
                }
                Op::AddRow(x, row) => {
                    let cols = grad.cols;
                    let mut rsum = Tensor::zeros(1, cols);
                    for i in 0..grad.rows {
                        for j in 0..cols {
                            rsum.data[j] += grad.data[i * cols + j];
                        }
                    }
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], grad); }
                    if self.nodes[*row].needs_grad { accumulate(&mut grads[*row], rsum); }
                }
                Op::Scale(x, s) => {
                    let g = Tensor::from_vec(grad.rows, grad.cols, grad.data.iter().map(|v| v * s).collect());
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], g); }
                }
                Op::Gelu(x) => {
                    let tx = &self.nodes[*x].value;
                    let data = tx
                        .data
                        .iter()
                        .zip(grad.data.iter())
                        .map(|(&xi, &gi)| gelu_grad(xi) * gi)
                        .collect();
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], Tensor::from_vec(grad.rows, grad.cols, data)); }
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut g = Tensor::zeros(grad.rows, grad.cols);
                    for i in 0..grad.rows {
                        let yrow = y.row(i);
                        let grow = grad.row(i);
                        let dot: f64 = yrow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..grad.cols {
                            g.data[i * grad.cols + j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], g); }
                }
                Op::LayerNorm { x, gain, bias } => {
                    let tx = &self.nodes[*x].value;
                    let tg = &self.nodes[*gain].value;
                    let n = tx.cols as f64;
                    let mut gx = Tensor::zeros(tx.rows, tx.cols);
                    let mut ggain = Tensor::zeros(1, tx.cols);
                    let mut gbias = Tensor::zeros(1, tx.cols);
                    for i in 0..tx.rows {
                        let row = tx.row(i);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let grow = grad.row(i);
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..tx.cols {
                            let xhat = (row[j] - mean) * inv;
                            let dxhat = grow[j] * tg.data[j];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            ggain.data[j] += grow[j] * xhat;
                            gbias.data[j] += grow[j];
                        }
                        for j in 0..tx.cols {
                            let xhat = (row[j] - mean) * inv;
                            let dxhat = grow[j] * tg.data[j];
                            gx.data[i * tx.cols + j] =
                                inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                        }
                    }
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], gx); }
                    if self.nodes[*gain].needs_grad { accumulate(&mut grads[*gain], ggain); }
                    if self.nodes[*bias].needs_grad { accumulate(&mut grads[*bias], gbias); }
                }
                Op::Rotary { x, cos, sin } => {
                    let half = grad.cols / 2;
                    let mut g = Tensor::zeros(grad.rows, grad.cols);
                    for i in 0..grad.rows {
                        for j in 0..half {
                            let c = cos.data[i * half + j];
                            let s = sin.data[i * half + j];
                            let g0 = grad.data[i * grad.cols + 2 * j];
                            let g1 = grad.data[i * grad.cols + 2 * j + 1];
                            // transpose of the forward rotation
                            g.data[i * grad.cols + 2 * j] = g0 * c + g1 * s;
                            g.data[i * grad.cols + 2 * j + 1] = -g0 * s + g1 * c;
                        }
                    }
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], g); }
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.nodes[*a].value.rows;
                    let cols = grad.cols;
                    let ga = Tensor::from_vec(ra, cols, grad.data[..ra * cols].to_vec());
                    let gb = Tensor::from_vec(grad.rows - ra, cols, grad.data[ra * cols..].to_vec());
                    if self.nodes[*a].needs_grad { accumulate(&mut grads[*a], ga); }
                    if self.nodes[*b].needs_grad { accumulate(&mut grads[*b], gb); }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let tp = &self.nodes[p].value;
                        let mut g = Tensor::zeros(tp.rows, tp.cols);
                        for i in 0..tp.rows {
                            g.data[i * tp.cols..(i + 1) * tp.cols]
                                .copy_from_slice(&grad.row(i)[off..off + tp.cols]);
                        }
                        off += tp.cols;
                        if self.nodes[p].needs_grad { accumulate(&mut grads[p], g); }
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let tx = &self.nodes[*x].value;
                    let mut g = Tensor::zeros(tx.rows, tx.cols);
                    for i in 0..tx.rows {
                        g.data[i * tx.cols + start..i * tx.cols + start + len]
                            .copy_from_slice(grad.row(i));
                    }
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], g); }
                }
                Op::SelectRow(x, row) => {
                    let tx = &self.nodes[*x].value;
                    let mut g = Tensor::zeros(tx.rows, tx.cols);
                    g.data[row * tx.cols..(row + 1) * tx.cols].copy_from_slice(&grad.data);
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], g); }
                }
                Op::MeanAbs(x) => {
                    let tx = &self.nodes[*x].value;
                    let scale = grad.scalar() / tx.numel() as f64;
                    let data = tx.data.iter().map(|&v| scale * v.signum()).collect();
                    if self.nodes[*x].needs_grad { accumulate(&mut grads[*x], Tensor::from_vec(tx.rows, tx.cols, data)); }
                }
                Op::AddScaled(a, b, alpha, beta) => {
                    let ga = Tensor::from_vec(grad.rows, grad.cols, grad.data.iter().map(|v| v * alpha).collect());
                    let gb = Tensor::from_vec(grad.rows, grad.cols, grad.data.iter().map(|v| v * beta).collect());
                    if self.nodes[*a].needs_grad { accumulate(&mut grads[*a], ga); }
                    if self.nodes[*b].needs_grad { accumulate(&mut grads[*b], gb); }
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            debug_assert_eq!((acc.rows, acc.cols), (g.rows, g.cols));
            for (a, b) in acc.data.iter_mut().zip(g.data.iter()) {
                *a += b;
            }
        }
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}
