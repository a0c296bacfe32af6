//! Reverse-mode automatic differentiation over [`Tensor2D`] values.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse, accumulating gradients for
//! every node that depends on a trainable leaf.

use super::tensor::{Tensor2D, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a (n x c) + row (1 x c)`
    AddRow(Var, Var),
    /// `a (n x c) * row (1 x c)`
    MulRow(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    /// Softmax over rows sharing a segment id, per column.
    SegmentSoftmax(Var, Vec<usize>),
    RowSoftmax(Var),
    SumAll(Var),
    SumAbs(Var),
    RowNorm(Var),
    WeightedCe {
        logits: Var,
        targets: Vec<usize>,
        /// Per-row weight divided by the weight total.
        scale: Vec<f64>,
        probs: Tensor2D,
    },
    BceLogits {
        logits: Var,
        targets: Tensor2D,
        /// Per-entry mask divided by the mask total.
        scale: Tensor2D,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2D,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor2D>>,
}

fn dims(msg: impl Into<String>) -> TensorError {
    TensorError::DimensionMismatch(msg.into())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2D, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor2D) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor2D) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(&[a]);
        self.push(value, Op::Transpose(a), ng)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(dims(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    fn row_op(&mut self, a: Var, row: Var, mul: bool) -> Result<Var, TensorError> {
        let (n, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(dims(format!("row broadcast of {:?} onto {n}x{c}", self.shape(row))));
        }
        let r = self.value(row).data.clone();
        let mut value = self.value(a).clone();
        for i in 0..n {
            for (x, &y) in value.row_mut(i).iter_mut().zip(&r) {
                if mul {
                    *x *= y
                } else {
                    *x += y
                }
            }
        }
        let ng = self.ng(&[a, row]);
        let op = if mul { Op::MulRow(a, row) } else { Op::AddRow(a, row) };
        Ok(self.push(value, op, ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.row_op(a, row, false)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.row_op(a, row, true)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        let ng = self.ng(&[a]);
        self.push(value, Op::Elu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.ng(&[a]);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(&[a]);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.shape(parts[0]).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(dims("concat_cols: row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Tensor2D::zeros(rows, cols);
        for i in 0..rows {
            let mut at = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                value.row_mut(i)[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.shape(parts[0]).1;
        if parts.iter().any(|&p| self.shape(p).1 != cols) {
            return Err(dims("concat_rows: column counts differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let rows = data.len() / cols.max(1);
        let value = Tensor2D { rows, cols, data };
        let ng = self.ng(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, TensorError> {
        let (n, c) = self.shape(a);
        if start + width > c {
            return Err(dims(format!("slice_cols {start}+{width} of {c}")));
        }
        let mut value = Tensor2D::zeros(n, width);
        for i in 0..n {
            value.row_mut(i).copy_from_slice(&self.value(a).row(i)[start..start + width]);
        }
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let (n, c) = self.shape(a);
        if idx.iter().any(|&i| i >= n) {
            return Err(dims("gather_rows: index out of range"));
        }
        let mut value = Tensor2D::zeros(idx.len(), c);
        for (k, &i) in idx.iter().enumerate() {
            value.row_mut(k).copy_from_slice(self.value(a).row(i));
        }
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// `out[idx[k]] += a[k]` into an `n_out`-row result.
    pub fn scatter_rows(&mut self, a: Var, idx: &[usize], n_out: usize) -> Result<Var, TensorError> {
        let (n, c) = self.shape(a);
        if idx.len() != n || idx.iter().any(|&i| i >= n_out) {
            return Err(dims("scatter_rows: bad index list"));
        }
        let mut value = Tensor2D::zeros(n_out, c);
        for (k, &i) in idx.iter().enumerate() {
            let src = self.value(a).row(k).to_vec();
            for (o, s) in value.row_mut(i).iter_mut().zip(src) {
                *o += s;
            }
        }
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::ScatterRows(a, idx.to_vec()), ng))
    }

    /// Softmax taken over all rows with the same `segment[row]`, separately
    /// for each column.
    pub fn segment_softmax(&mut self, a: Var, segment: &[usize]) -> Result<Var, TensorError> {
        let (n, c) = self.shape(a);
        if segment.len() != n {
            return Err(dims("segment_softmax: segment list length"));
        }
        let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
        let x = self.value(a);
        let mut max = Tensor2D::filled(n_seg, c, f64::NEG_INFINITY);
        for r in 0..n {
            for j in 0..c {
                let m = &mut max.data[segment[r] * c + j];
                *m = m.max(x.get(r, j));
            }
        }
        let mut value = Tensor2D::zeros(n, c);
        let mut total = Tensor2D::zeros(n_seg, c);
        for r in 0..n {
            for j in 0..c {
                let e = (x.get(r, j) - max.get(segment[r], j)).exp();
                value.set(r, j, e);
                total.data[segment[r] * c + j] += e;
            }
        }
        for r in 0..n {
            for j in 0..c {
                let t = total.get(segment[r], j);
                value.data[r * c + j] /= t;
            }
        }
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::SegmentSoftmax(a, segment.to_vec()), ng))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows {
            softmax_in_place(value.row_mut(r));
        }
        let ng = self.ng(&[a]);
        self.push(value, Op::RowSoftmax(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor2D::scalar(self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(value, Op::SumAll(a), ng)
    }

    pub fn sum_abs(&mut self, a: Var) -> Var {
        let value = Tensor2D::scalar(self.value(a).data.iter().map(|x| x.abs()).sum());
        let ng = self.ng(&[a]);
        self.push(value, Op::SumAbs(a), ng)
    }

    /// Euclidean norm of each row, as an `n x 1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows)
            .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor2D {
            rows: x.rows,
            cols: 1,
            data,
        };
        let ng = self.ng(&[a]);
        self.push(value, Op::RowNorm(a), ng)
    }

    /// `sum_i w_i * CE(logits_i, targets_i) / sum_i w_i` as a scalar.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var, TensorError> {
        let (n, c) = self.shape(logits);
        if targets.len() != n || weights.len() != n || targets.iter().any(|&t| t >= c) {
            return Err(dims("weighted_cross_entropy: targets do not match logits"));
        }
        let total: f64 = weights.iter().sum();
        let scale: Vec<f64> = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![0.0; n]
        };
        let mut probs = self.value(logits).clone();
        let mut loss = 0.0;
        for r in 0..n {
            let row = probs.row_mut(r);
            let lse = log_sum_exp(row);
            loss += scale[r] * (lse - row[targets[r]]);
            softmax_in_place(row);
        }
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Tensor2D::scalar(loss),
            Op::WeightedCe {
                logits,
                targets: targets.to_vec(),
                scale,
                probs,
            },
            ng,
        ))
    }

    /// Masked mean binary cross-entropy on logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor2D, mask: &Tensor2D) -> Result<Var, TensorError> {
        let shape = self.shape(logits);
        if targets.shape() != shape || mask.shape() != shape {
            return Err(dims("bce_with_logits: shape mismatch"));
        }
        let total = mask.sum();
        let scale = if total > 0.0 { mask.map(|m| m / total) } else { mask.map(|_| 0.0) };
        let x = self.value(logits);
        let mut loss = 0.0;
        for k in 0..x.data.len() {
            let (z, y) = (x.data[k], targets.data[k]);
            loss += scale.data[k] * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
        }
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Tensor2D::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.clone(),
                scale,
            },
            ng,
        ))
    }

    /// Gradient of `v` after [`Tape::backward`]; zeros when `v` received none.
    pub fn grad(&self, v: Var) -> Tensor2D {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Tensor2D::zeros(r, c)
            }
        }
    }

    fn acc(grads: &mut [Option<Tensor2D>], nodes: &[Node], v: Var, g: Tensor2D) {
        if !nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagates from the scalar `out`.
    pub fn backward(&mut self, out: Var) {
        let mut grads: Vec<Option<Tensor2D>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor2D::filled(self.shape(out).0, self.shape(out).1, 1.0));
        let nodes = &self.nodes;
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !nodes[i].needs_grad {
                continue;
            }
            let y = &nodes[i].value;
            match &nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    if nodes[a.0].needs_grad {
                        let ga = g.matmul(&bv.transpose()).expect("shapes checked forward");
                        Self::acc(&mut grads, nodes, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let gb = av.transpose().matmul(&g).expect("shapes checked forward");
                        Self::acc(&mut grads, nodes, *b, gb);
                    }
                }
                Op::Transpose(a) => Self::acc(&mut grads, nodes, *a, g.transpose()),
                Op::Add(a, b) => {
                    Self::acc(&mut grads, nodes, *a, g.clone());
                    Self::acc(&mut grads, nodes, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    Self::acc(&mut grads, nodes, *a, g.clone());
                    Self::acc(&mut grads, nodes, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&nodes[b.0].value, |x, y| x * y);
                    let gb = g.zip_map(&nodes[a.0].value, |x, y| x * y);
                    Self::acc(&mut grads, nodes, *a, ga);
                    Self::acc(&mut grads, nodes, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor2D::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    Self::acc(&mut grads, nodes, *row, gr);
                    Self::acc(&mut grads, nodes, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let av = &nodes[a.0].value;
                    let rv = &nodes[row.0].value;
                    let mut ga = g.clone();
                    let mut gr = Tensor2D::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for j in 0..g.cols {
                            ga.data[r * g.cols + j] *= rv.data[j];
                            gr.data[j] += g.get(r, j) * av.get(r, j);
                        }
                    }
                    Self::acc(&mut grads, nodes, *a, ga);
                    Self::acc(&mut grads, nodes, *row, gr);
                }
                Op::Scale(a, s) => Self::acc(&mut grads, nodes, *a, g.map(|x| x * s)),
                Op::Elu(a) => {
                    let ga = g.zip_map(y, |d, yv| if yv > 0.0 { d } else { d * (yv + 1.0) });
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let ga = g.zip_map(&nodes[a.0].value, |d, x| if x > 0.0 { d } else { d * slope });
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::Tanh(a) => Self::acc(&mut grads, nodes, *a, g.zip_map(y, |d, t| d * (1.0 - t * t))),
                Op::Sigmoid(a) => Self::acc(&mut grads, nodes, *a, g.zip_map(y, |d, s| d * s * (1.0 - s))),
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = nodes[p.0].value.cols;
                        let mut gp = Tensor2D::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[at..at + w]);
                        }
                        at += w;
                        Self::acc(&mut grads, nodes, *p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let (r, c) = nodes[p.0].value.shape();
                        let gp = Tensor2D {
                            rows: r,
                            cols: c,
                            data: g.data[at..at + r * c].to_vec(),
                        };
                        at += r * c;
                        Self::acc(&mut grads, nodes, *p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let mut ga = Tensor2D::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let mut ga = Tensor2D::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::ScatterRows(a, idx) => {
                    let c = g.cols;
                    let mut ga = Tensor2D::zeros(idx.len(), c);
                    for (k, &i) in idx.iter().enumerate() {
                        ga.row_mut(k).copy_from_slice(g.row(i));
                    }
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::SegmentSoftmax(a, segment) => {
                    let c = g.cols;
                    let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = Tensor2D::zeros(n_seg, c);
                    for r in 0..g.rows {
                        for j in 0..c {
                            dot.data[segment[r] * c + j] += y.get(r, j) * g.get(r, j);
                        }
                    }
                    let mut ga = Tensor2D::zeros(g.rows, c);
                    for r in 0..g.rows {
                        for j in 0..c {
                            ga.set(r, j, y.get(r, j) * (g.get(r, j) - dot.get(segment[r], j)));
                        }
                    }
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::RowSoftmax(a) => {
                    let mut ga = Tensor2D::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let d: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for j in 0..g.cols {
                            ga.set(r, j, y.get(r, j) * (g.get(r, j) - d));
                        }
                    }
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::SumAll(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    Self::acc(&mut grads, nodes, *a, Tensor2D::filled(r, c, g.data[0]));
                }
                Op::SumAbs(a) => {
                    let d = g.data[0];
                    let ga = nodes[a.0].value.map(|x| d * sign(x));
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::RowNorm(a) => {
                    let x = &nodes[a.0].value;
                    let mut ga = Tensor2D::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let norm = y.data[r];
                        if norm > 0.0 {
                            for j in 0..x.cols {
                                ga.set(r, j, g.data[r] * x.get(r, j) / norm);
                            }
                        }
                    }
                    Self::acc(&mut grads, nodes, *a, ga);
                }
                Op::WeightedCe {
                    logits,
                    targets,
                    scale,
                    probs,
                } => {
                    let d = g.data[0];
                    let mut ga = probs.clone();
                    for r in 0..ga.rows {
                        ga.data[r * ga.cols + targets[r]] -= 1.0;
                        for v in ga.row_mut(r) {
                            *v *= d * scale[r];
                        }
                    }
                    Self::acc(&mut grads, nodes, *logits, ga);
                }
                Op::BceLogits { logits, targets, scale } => {
                    let d = g.data[0];
                    let x = &nodes[logits.0].value;
                    let mut ga = Tensor2D::zeros(x.rows, x.cols);
                    for k in 0..x.data.len() {
                        ga.data[k] = d * scale.data[k] * (sigmoid(x.data[k]) - targets.data[k]);
                    }
                    Self::acc(&mut grads, nodes, *logits, ga);
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
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

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}
