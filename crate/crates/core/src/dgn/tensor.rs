//! Minimal reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] records the forward computation as a flat list of nodes; calling
//! [`Tape::backward`] walks the list in reverse and accumulates exact
//! gradients for every node. The op set is exactly what the network forward
//! pass needs. Everything is double precision.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// C = A * B.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut c = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                c.data[i * c.cols + j] += aik * b.data[k * b.cols + j];
            }
        }
    }
    c
}

/// C = A * B^T.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch");
    let mut c = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            let mut s = 0.0;
            for k in 0..a.cols {
                s += a.data[i * a.cols + k] * b.data[j * b.cols + k];
            }
            c.data[i * c.cols + j] = s;
        }
    }
    c
}

/// C = A^T * B.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows, "matmul_tn shape mismatch");
    let mut c = Mat::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        for i in 0..a.cols {
            let aki = a.data[k * a.cols + i];
            if aki == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                c.data[i * c.cols + j] += aki * b.data[k * b.cols + j];
            }
        }
    }
    c
}

pub type NodeId = usize;

enum Op {
    Leaf,
    /// parents.0 (r x k) * parents.1 (k x c)
    MatMul(NodeId, NodeId),
    /// parents.0 (r x k) * parents.1^T (c x k)
    MatMulNt(NodeId, NodeId),
    /// broadcast-add a 1 x c bias row to every row of parents.0
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    Scale(NodeId, f64),
    /// column-wise concatenation
    ConcatCols(Vec<NodeId>),
    /// row-wise softmax restricted to positions where the mask is set;
    /// unmasked positions are exactly zero
    MaskedSoftmaxRows(NodeId, Vec<u8>),
    /// out[i] = in[i, idx[i]], result r x 1
    GatherCols(NodeId, Vec<usize>),
    /// (1/r) * sum((x - target)^2) over an r x 1 input, result 1 x 1
    SqErrMean(NodeId, Vec<f64>),
    /// mean of several 1 x 1 scalars
    MeanScalars(Vec<NodeId>),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Forward-computation record supporting one reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Register an input or parameter matrix.
    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul_nt(self.value(a), self.value(b));
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xm = self.value(x);
        let bm = self.value(bias);
        assert_eq!(bm.rows, 1);
        assert_eq!(bm.cols, xm.cols);
        let mut v = xm.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += bm.data[j];
            }
        }
        self.push(v, Op::AddBias(x, bias))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        for e in &mut v.data {
            if *e < 0.0 {
                *e = 0.0;
            }
        }
        self.push(v, Op::Relu(x))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let mut v = self.value(x).clone();
        for e in &mut v.data {
            *e *= s;
        }
        self.push(v, Op::Scale(x, s))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let pm = self.value(p);
            assert_eq!(pm.rows, rows);
            for i in 0..rows {
                for j in 0..pm.cols {
                    v.data[i * total + off + j] = pm.data[i * pm.cols + j];
                }
            }
            off += pm.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise masked softmax: entries where `mask` is 0 come out exactly 0,
    /// masked-in entries of each row sum to 1. Uses max-subtraction for
    /// numerical stability. Every row must have at least one masked-in entry.
    pub fn masked_softmax_rows(&mut self, x: NodeId, mask: &[u8]) -> NodeId {
        let xm = self.value(x);
        assert_eq!(mask.len(), xm.data.len());
        let (rows, cols) = (xm.rows, xm.cols);
        let mut v = Mat::zeros(rows, cols);
        for i in 0..rows {
            let row = &xm.data[i * cols..(i + 1) * cols];
            let mrow = &mask[i * cols..(i + 1) * cols];
            let mx = row
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m != 0)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(mx.is_finite(), "masked softmax row {i} has empty support");
            let mut denom = 0.0;
            for j in 0..cols {
                if mrow[j] != 0 {
                    let e = (row[j] - mx).exp();
                    v.data[i * cols + j] = e;
                    denom += e;
                }
            }
            for j in 0..cols {
                v.data[i * cols + j] /= denom;
            }
        }
        self.push(v, Op::MaskedSoftmaxRows(x, mask.to_vec()))
    }

    pub fn gather_cols(&mut self, x: NodeId, indices: &[usize]) -> NodeId {
        let xm = self.value(x);
        assert_eq!(indices.len(), xm.rows);
        let mut v = Mat::zeros(xm.rows, 1);
        for (i, &j) in indices.iter().enumerate() {
            v.data[i] = xm.get(i, j);
        }
        self.push(v, Op::GatherCols(x, indices.to_vec()))
    }

    pub fn sq_err_mean(&mut self, x: NodeId, target: &[f64]) -> NodeId {
        let xm = self.value(x);
        assert_eq!(xm.cols, 1);
        assert_eq!(target.len(), xm.rows);
        let n = xm.rows as f64;
        let s: f64 = xm
            .data
            .iter()
            .zip(target)
            .map(|(&x, &t)| (x - t) * (x - t))
            .sum();
        self.push(
            Mat::from_vec(1, 1, vec![s / n]),
            Op::SqErrMean(x, target.to_vec()),
        )
    }

    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let s: f64 = parts.iter().map(|&p| self.value(p).data[0]).sum();
        self.push(
            Mat::from_vec(1, 1, vec![s / parts.len() as f64]),
            Op::MeanScalars(parts.to_vec()),
        )
    }

    /// Reverse sweep from a scalar root. Returns one gradient slot per node;
    /// nodes the root does not depend on stay `None`.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Mat>> {
        let rv = &self.nodes[root].value;
        assert_eq!((rv.rows, rv.cols), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[root] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    // Leaves keep their gradient for the caller to read.
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, &self.nodes[*b].value);
                    let db = matmul_tn(&self.nodes[*a].value, &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = matmul(&g, &self.nodes[*b].value);
                    let db = matmul_tn(&g, &self.nodes[*a].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(x, bias) => {
                    let cols = g.cols;
                    let mut db = Mat::zeros(1, cols);
                    for i in 0..g.rows {
                        for j in 0..cols {
                            db.data[j] += g.data[i * cols + j];
                        }
                    }
                    accumulate(&mut grads, *x, g.clone());
                    accumulate(&mut grads, *bias, db);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = g.clone();
                    for (d, &v) in dx.data.iter_mut().zip(&xv.data) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Scale(x, s) => {
                    let mut dx = g.clone();
                    for d in &mut dx.data {
                        *d *= s;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pm = &self.nodes[p].value;
                        let mut dp = Mat::zeros(pm.rows, pm.cols);
                        for i in 0..pm.rows {
                            for j in 0..pm.cols {
                                dp.data[i * pm.cols + j] = g.data[i * g.cols + off + j];
                            }
                        }
                        accumulate(&mut grads, p, dp);
                        off += pm.cols;
                    }
                }
                Op::MaskedSoftmaxRows(x, mask) => {
                    let alpha = &self.nodes[id].value;
                    let (rows, cols) = (alpha.rows, alpha.cols);
                    let mut dx = Mat::zeros(rows, cols);
                    for i in 0..rows {
                        let mut dot = 0.0;
                        for j in 0..cols {
                            dot += alpha.data[i * cols + j] * g.data[i * cols + j];
                        }
                        for j in 0..cols {
                            if mask[i * cols + j] != 0 {
                                dx.data[i * cols + j] =
                                    alpha.data[i * cols + j] * (g.data[i * cols + j] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GatherCols(x, indices) => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for (i, &j) in indices.iter().enumerate() {
                        dx.data[i * xv.cols + j] = g.data[i];
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SqErrMean(x, target) => {
                    let xv = &self.nodes[*x].value;
                    let n = xv.rows as f64;
                    let scale = 2.0 / n * g.data[0];
                    let mut dx = Mat::zeros(xv.rows, 1);
                    for i in 0..xv.rows {
                        dx.data[i] = scale * (xv.data[i] - target[i]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanScalars(parts) => {
                    let share = g.data[0] / parts.len() as f64;
                    for &p in parts {
                        accumulate(&mut grads, p, Mat::from_vec(1, 1, vec![share]));
                    }
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Mat>], id: NodeId, g: Mat) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    /// Scalar loss used for finite-difference checking: touches every op.
    fn composite_loss(inputs: &[Mat]) -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let (x, w, b, wv) = (ids[0], ids[1], ids[2], ids[3]);
        let h = tape.matmul(x, w);
        let h = tape.add_bias(h, b);
        let h = tape.relu(h);
        let scores = tape.matmul_nt(h, h);
        let scores = tape.scale(scores, 0.5);
        let mask = vec![1u8, 1, 0, 1, 1, 0, 0, 0, 1];
        let alpha = tape.masked_softmax_rows(scores, &mask);
        let mixed = tape.matmul(alpha, h);
        let both = tape.concat_cols(&[h, mixed]);
        let q = tape.matmul(both, wv);
        let sel = tape.gather_cols(q, &[0, 1, 0]);
        let l1 = tape.sq_err_mean(sel, &[0.3, -0.2, 0.8]);
        let l2 = tape.sq_err_mean(sel, &[0.0, 0.0, 0.0]);
        let loss = tape.mean_scalars(&[l1, l2]);
        tape.value(loss).data[0]
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs = vec![
            random_mat(&mut rng, 3, 4),
            random_mat(&mut rng, 4, 5),
            random_mat(&mut rng, 1, 5),
            random_mat(&mut rng, 10, 2),
        ];

        // Analytic gradients.
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let (x, w, b, wv) = (ids[0], ids[1], ids[2], ids[3]);
        let h = tape.matmul(x, w);
        let h = tape.add_bias(h, b);
        let h = tape.relu(h);
        let scores = tape.matmul_nt(h, h);
        let scores = tape.scale(scores, 0.5);
        let mask = vec![1u8, 1, 0, 1, 1, 0, 0, 0, 1];
        let alpha = tape.masked_softmax_rows(scores, &mask);
        let mixed = tape.matmul(alpha, h);
        let both = tape.concat_cols(&[h, mixed]);
        let q = tape.matmul(both, wv);
        let sel = tape.gather_cols(q, &[0, 1, 0]);
        let l1 = tape.sq_err_mean(sel, &[0.3, -0.2, 0.8]);
        let l2 = tape.sq_err_mean(sel, &[0.0, 0.0, 0.0]);
        let loss = tape.mean_scalars(&[l1, l2]);
        let grads = tape.backward(loss);

        let h_step = 1e-5;
        for (mi, m) in inputs.iter().enumerate() {
            let g = grads[ids[mi]].as_ref().expect("input should have gradient");
            for k in 0..m.len() {
                let mut plus = inputs.clone();
                plus[mi].data[k] += h_step;
                let mut minus = inputs.clone();
                minus[mi].data[k] -= h_step;
                let fd = (composite_loss(&plus) - composite_loss(&minus)) / (2.0 * h_step);
                let an = g.data[k];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-3,
                    "input {mi} elem {k}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn masked_softmax_rows_normalize() {
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::from_vec(2, 3, vec![5.0, 1.0, -2.0, 0.0, 0.0, 0.0]));
        let mask = vec![1u8, 0, 1, 1, 1, 1];
        let a = tape.masked_softmax_rows(x, &mask);
        let v = tape.value(a);
        assert_eq!(v.get(0, 1), 0.0);
        assert!((v.get(0, 0) + v.get(0, 2) - 1.0).abs() < 1e-12);
        for j in 0..3 {
            assert!((v.get(1, j) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_error_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::from_vec(2, 1, vec![1.5, -0.5]));
        let l = tape.sq_err_mean(x, &[1.5, -0.5]);
        assert_eq!(tape.value(l).data[0], 0.0);
        let grads = tape.backward(l);
        assert!(grads[x].as_ref().unwrap().data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_accumulates_over_shared_subexpressions() {
        // loss = mean((x*w at col 0) vs 0) where w is used twice via concat
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::from_vec(1, 2, vec![1.0, 2.0]));
        let cat = tape.concat_cols(&[x, x]);
        let sel = tape.gather_cols(cat, &[1]);
        let l = tape.sq_err_mean(sel, &[0.0]);
        let grads = tape.backward(l);
        let gx = grads[x].as_ref().unwrap();
        // d/dx1 of x1^2 = 2*x1 = 4 (only one of the two copies is selected)
        assert_eq!(gx.data, vec![0.0, 4.0]);
    }
}
