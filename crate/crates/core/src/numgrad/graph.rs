//! Define-by-run reverse-mode differentiation over 2-D `f64` matrices.
//!
//! Every node stores its forward value. Node ids are assigned in creation
//! order, so inputs always precede consumers and `backward` is a single
//! reverse sweep over ids.

use super::{NumError, Tensor};

/// Lower bound applied to the argument of [`Graph::log`].
pub const LOG_CLAMP: f64 = 1e-12;
/// Below this norm the gradient of a Euclidean norm is taken to be zero.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-major `f64` matrix used for graph values and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if rows * cols != data.len() {
            return Err(NumError::ElementCount {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let (rows, cols) = t.matrix_dims();
        Self {
            rows,
            cols,
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    /// Stacks equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, NumError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumError::Shape {
                    op: "stack",
                    left: vec![1, cols],
                    right: vec![1, r.len()],
                });
            }
            data.extend(r.iter().map(|&v| v as f64));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_tensor(&self) -> Result<Tensor, NumError> {
        Tensor::from_f64(vec![self.rows, self.cols], &self.data)
    }

    pub fn row_f32(&self, i: usize) -> Vec<f32> {
        self.row(i).iter().map(|&v| v as f32).collect()
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, operands described by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: slice lengths cover the index ranges implied by the strides:
    // `a` is m×k, `b` is k×n and `c` is a contiguous m×n row-major block.
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

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId, Broadcast),
    Sub(NodeId, NodeId, Broadcast),
    Mul(NodeId, NodeId, Broadcast),
    Scale(NodeId, f64),
    Shift(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    L2Norm(NodeId),
    RowNorms(NodeId),
    Concat(NodeId, NodeId),
    Transpose(NodeId),
    LogSoftmax(NodeId),
}

struct Node {
    op: Op,
    value: Mat,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the parameter nodes of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for a node, or `None` for nodes that are not parameters.
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        self.get(id).map(|m| m.data.as_slice()).unwrap_or(&[])
    }
}

/// Append-only computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
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

    fn push(&mut self, op: Op, value: Mat, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        id
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn dims(&self, id: NodeId) -> Vec<usize> {
        self.nodes[id.0].value.shape().to_vec()
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, Mat::from_tensor(t), false)
    }

    pub fn constant_mat(&mut self, m: Mat) -> NodeId {
        self.push(Op::Leaf, m, false)
    }

    /// Trainable leaf. Its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.param_mat(Mat::from_tensor(t))
    }

    pub fn param_mat(&mut self, m: Mat) -> NodeId {
        let id = self.push(Op::Leaf, m, true);
        self.params.push(id);
        id
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data[0]
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.cols != bv.rows {
            return Err(NumError::Shape {
                op: "matmul",
                left: self.dims(a),
                right: self.dims(b),
            });
        }
        let (m, k, n) = (av.rows, av.cols, bv.cols);
        let mut out = Mat::zeros(m, n);
        gemm(
            m,
            k,
            n,
            &av.data,
            (k as isize, 1),
            &bv.data,
            (n as isize, 1),
            0.0,
            &mut out.data,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    fn broadcast_kind(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Broadcast, NumError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() == bv.shape() {
            Ok(Broadcast::Same)
        } else if bv.rows == 1 && bv.cols == 1 {
            Ok(Broadcast::Scalar)
        } else if bv.rows == 1 && bv.cols == av.cols {
            Ok(Broadcast::Row)
        } else if bv.cols == 1 && bv.rows == av.rows {
            Ok(Broadcast::Col)
        } else {
            Err(NumError::Shape {
                op,
                left: self.dims(a),
                right: self.dims(b),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId, Broadcast) -> Op,
    ) -> Result<NodeId, NumError> {
        let kind = self.broadcast_kind(name, a, b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let cols = av.cols;
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(idx, &x)| {
                let y = match kind {
                    Broadcast::Same => bv.data[idx],
                    Broadcast::Row => bv.data[idx % cols],
                    Broadcast::Col => bv.data[idx / cols],
                    Broadcast::Scalar => bv.data[0],
                };
                f(x, y)
            })
            .collect();
        let out = Mat {
            rows: av.rows,
            cols,
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(make(a, b, kind), out, rg))
    }

    /// `a + b`; `b` may be a `1×n` row, an `m×1` column or a `1×1` scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = &self.nodes[x.0].value;
        let out = Mat {
            rows: v.rows,
            cols: v.cols,
            data: v.data.iter().map(|&t| f(t)).collect(),
        };
        let rg = self.rg(x);
        self.push(op, out, rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, Op::Scale(x, c), |t| t * c)
    }

    /// `x + c` for a constant `c`.
    pub fn shift(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, Op::Shift(x), |t| t + c)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu(x), |t| if t > 0.0 { t } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `ln(1 + eˣ)`.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Softplus(x), softplus)
    }

    /// Natural log of `max(x, LOG_CLAMP)`.
    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Log(x), |t| t.max(LOG_CLAMP).ln())
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.data.iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Mat::new(1, 1, vec![s]).unwrap(), rg)
    }

    /// Mean over all elements. The mean of an empty matrix is 0.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value.data;
        let m = if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        let rg = self.rg(x);
        self.push(Op::Mean(x), Mat::new(1, 1, vec![m]).unwrap(), rg)
    }

    /// Euclidean norm over all elements.
    pub fn l2norm(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x.0].value.data.iter().map(|t| t * t).sum::<f64>().sqrt();
        let rg = self.rg(x);
        self.push(Op::L2Norm(x), Mat::new(1, 1, vec![n]).unwrap(), rg)
    }

    /// Euclidean norm of each row, as an `m×1` column.
    pub fn row_norms(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let data = (0..v.rows)
            .map(|i| v.row(i).iter().map(|t| t * t).sum::<f64>().sqrt())
            .collect();
        let out = Mat {
            rows: v.rows,
            cols: 1,
            data,
        };
        let rg = self.rg(x);
        self.push(Op::RowNorms(x), out, rg)
    }

    /// Column-wise concatenation `[a, b]` of two matrices with equal row
    /// counts; for row vectors this is plain vector concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rows != bv.rows {
            return Err(NumError::Shape {
                op: "concat",
                left: self.dims(a),
                right: self.dims(b),
            });
        }
        let cols = av.cols + bv.cols;
        let mut data = Vec::with_capacity(av.rows * cols);
        for i in 0..av.rows {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let out = Mat {
            rows: av.rows,
            cols,
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Concat(a, b), out, rg))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let out = transposed(v);
        let rg = self.rg(x);
        self.push(Op::Transpose(x), out, rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(v.data.len());
        for i in 0..v.rows {
            let row = v.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|t| t - lse));
        }
        let out = Mat {
            rows: v.rows,
            cols: v.cols,
            data,
        };
        let rg = self.rg(x);
        self.push(Op::LogSoftmax(x), out, rg)
    }

    /// ReLU activation pattern of every `relu` node, plus a flag telling
    /// whether any ReLU input sits exactly on the kink.
    pub fn relu_signature(&self) -> (Vec<bool>, bool) {
        let mut pattern = Vec::new();
        let mut on_kink = false;
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for &t in &self.nodes[x.0].value.data {
                    pattern.push(t > 0.0);
                    on_kink |= t == 0.0;
                }
            }
        }
        (pattern, on_kink)
    }

    /// Reverse-mode sweep from a scalar loss. Every parameter node receives a
    /// gradient; parameters the loss does not depend on get exact zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumError> {
        let lv = &self.nodes[loss.0].value;
        if lv.rows != 1 || lv.cols != 1 {
            return Err(NumError::NotScalar {
                shape: self.dims(loss),
            });
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::new(1, 1, vec![1.0]).unwrap());

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            // Leaves keep their gradient for reporting.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        let mut by_node: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        for &p in &self.params {
            let v = &self.nodes[p.0].value;
            by_node[p.0] = Some(grads[p.0].take().unwrap_or_else(|| Mat::zeros(v.rows, v.cols)));
        }
        Ok(Gradients { by_node })
    }

    fn propagate(&self, op: &Op, out: &Mat, g: &Mat, grads: &mut [Option<Mat>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows, av.cols, bv.cols);
                if self.rg(a) {
                    // dA = dC · Bᵀ
                    let acc = slot(grads, a, m, k);
                    gemm(
                        m,
                        n,
                        k,
                        &g.data,
                        (n as isize, 1),
                        &bv.data,
                        (1, n as isize),
                        1.0,
                        &mut acc.data,
                    );
                }
                if self.rg(b) {
                    // dB = Aᵀ · dC
                    let acc = slot(grads, b, k, n);
                    gemm(
                        k,
                        m,
                        n,
                        &av.data,
                        (1, k as isize),
                        &g.data,
                        (n as isize, 1),
                        1.0,
                        &mut acc.data,
                    );
                }
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.rg(a) {
                    let acc = slot(grads, a, g.rows, g.cols);
                    acc.data.iter_mut().zip(&g.data).for_each(|(s, d)| *s += d);
                }
                if self.rg(b) {
                    let bv = val(b);
                    let acc = slot(grads, b, bv.rows, bv.cols);
                    reduce_into(acc, g, kind, sign, None);
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (val(a), val(b));
                if self.rg(a) {
                    let cols = g.cols;
                    let acc = slot(grads, a, g.rows, g.cols);
                    for (idx, s) in acc.data.iter_mut().enumerate() {
                        let y = match kind {
                            Broadcast::Same => bv.data[idx],
                            Broadcast::Row => bv.data[idx % cols],
                            Broadcast::Col => bv.data[idx / cols],
                            Broadcast::Scalar => bv.data[0],
                        };
                        *s += g.data[idx] * y;
                    }
                }
                if self.rg(b) {
                    let acc = slot(grads, b, bv.rows, bv.cols);
                    reduce_into(acc, g, kind, 1.0, Some(&av.data));
                }
            }
            Op::Scale(x, c) => {
                let acc = slot(grads, x, g.rows, g.cols);
                acc.data.iter_mut().zip(&g.data).for_each(|(s, d)| *s += c * d);
            }
            Op::Shift(x) => {
                let acc = slot(grads, x, g.rows, g.cols);
                acc.data.iter_mut().zip(&g.data).for_each(|(s, d)| *s += d);
            }
            Op::Relu(x) => {
                let xv = &val(x).data;
                let acc = slot(grads, x, g.rows, g.cols);
                for ((s, d), &t) in acc.data.iter_mut().zip(&g.data).zip(xv) {
                    if t > 0.0 {
                        *s += d;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let acc = slot(grads, x, g.rows, g.cols);
                for ((s, d), &y) in acc.data.iter_mut().zip(&g.data).zip(&out.data) {
                    *s += d * y * (1.0 - y);
                }
            }
            Op::Softplus(x) => {
                let xv = &val(x).data;
                let acc = slot(grads, x, g.rows, g.cols);
                for ((s, d), &t) in acc.data.iter_mut().zip(&g.data).zip(xv) {
                    *s += d * sigmoid(t);
                }
            }
            Op::Log(x) => {
                let xv = &val(x).data;
                let acc = slot(grads, x, g.rows, g.cols);
                for ((s, d), &t) in acc.data.iter_mut().zip(&g.data).zip(xv) {
                    if t > LOG_CLAMP {
                        *s += d / t;
                    }
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                let xv = val(x);
                let n = xv.data.len();
                let d = if matches!(op, Op::Mean(_)) && n > 0 {
                    g.data[0] / n as f64
                } else {
                    g.data[0]
                };
                let acc = slot(grads, x, xv.rows, xv.cols);
                acc.data.iter_mut().for_each(|s| *s += d);
            }
            Op::L2Norm(x) => {
                let norm = out.data[0];
                if norm >= NORM_GUARD {
                    let xv = val(x);
                    let c = g.data[0] / norm;
                    let acc = slot(grads, x, xv.rows, xv.cols);
                    acc.data.iter_mut().zip(&xv.data).for_each(|(s, t)| *s += c * t);
                } else {
                    let xv = val(x);
                    slot(grads, x, xv.rows, xv.cols);
                }
            }
            Op::RowNorms(x) => {
                let xv = val(x);
                let cols = xv.cols;
                let acc = slot(grads, x, xv.rows, xv.cols);
                for i in 0..xv.rows {
                    let norm = out.data[i];
                    if norm < NORM_GUARD {
                        continue;
                    }
                    let c = g.data[i] / norm;
                    for j in 0..cols {
                        acc.data[i * cols + j] += c * xv.data[i * cols + j];
                    }
                }
            }
            Op::Concat(a, b) => {
                let (p, q) = (val(a).cols, val(b).cols);
                if self.rg(a) {
                    let acc = slot(grads, a, g.rows, p);
                    for i in 0..g.rows {
                        for j in 0..p {
                            acc.data[i * p + j] += g.data[i * (p + q) + j];
                        }
                    }
                }
                if self.rg(b) {
                    let acc = slot(grads, b, g.rows, q);
                    for i in 0..g.rows {
                        for j in 0..q {
                            acc.data[i * q + j] += g.data[i * (p + q) + p + j];
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let gt = transposed(g);
                let acc = slot(grads, x, gt.rows, gt.cols);
                acc.data.iter_mut().zip(&gt.data).for_each(|(s, d)| *s += d);
            }
            Op::LogSoftmax(x) => {
                let cols = g.cols;
                let acc = slot(grads, x, g.rows, g.cols);
                for i in 0..g.rows {
                    let gs: f64 = g.row(i).iter().sum();
                    for j in 0..cols {
                        let p = out.data[i * cols + j].exp();
                        acc.data[i * cols + j] += g.data[i * cols + j] - p * gs;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Mat>], id: NodeId, rows: usize, cols: usize) -> &mut Mat {
    grads[id.0].get_or_insert_with(|| Mat::zeros(rows, cols))
}

/// Accumulates `sign * g (⊙ other)` into a possibly broadcast operand's gradient.
fn reduce_into(acc: &mut Mat, g: &Mat, kind: Broadcast, sign: f64, other: Option<&[f64]>) {
    let cols = g.cols;
    for (idx, &d) in g.data.iter().enumerate() {
        let d = sign * d * other.map_or(1.0, |o| o[idx]);
        match kind {
            Broadcast::Same => acc.data[idx] += d,
            Broadcast::Row => acc.data[idx % cols] += d,
            Broadcast::Col => acc.data[idx / cols] += d,
            Broadcast::Scalar => acc.data[0] += d,
        }
    }
}

fn transposed(v: &Mat) -> Mat {
    let mut data = vec![0.0; v.data.len()];
    for i in 0..v.rows {
        for j in 0..v.cols {
            data[j * v.rows + i] = v.data[i * v.cols + j];
        }
    }
    Mat {
        rows: v.cols,
        cols: v.rows,
        data,
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}
