//! Dense-tensor math with reverse-mode differentiation.
//!
//! A tape-based graph records every forward op; `Graph::backward` walks the
//! tape in reverse and accumulates gradients into every leaf that requires
//! them. Values are `f64` throughout and all kernels are deterministic:
//! identical inputs produce bitwise identical outputs.

mod checkpoint;
mod gradcheck;
mod params;
mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, PSTW_MAGIC, PSTW_VERSION};
pub use gradcheck::gradient_check;
pub use params::{glorot_uniform, Param, ParamSet};
pub use sgd::{effective_lr, sgd_step, SgdConfig};

use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Immutable value payload: a shape and shared flat storage (row-major).
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(AutodiffError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape, data: Arc::new(vec![0.0; numel]) }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: Arc::new(vec![v]) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        let v: &mut Vec<f64> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn shared(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Sub { a: NodeId, b: NodeId },
    SquaredDiff { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    MaxAxis { x: NodeId, axis: usize, argmax: Vec<usize> },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    Scale { x: NodeId, factor: f64 },
    Concat { axis: usize, parts: Vec<NodeId> },
    Reshape { x: NodeId },
    GatherRows { x: NodeId, indices: Arc<Vec<usize>> },
    InterpRows { x: NodeId, indices: Arc<Vec<usize>>, weights: Arc<Vec<f64>>, k: usize },
    CrossEntropy { logits: NodeId, targets: Arc<Vec<usize>> },
}

struct Node {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Forward tape. Build ops, call `backward` on a scalar node, read gradients.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    // (node, parameter name) pairs recorded by `param`, exported after backward
    bindings: Vec<(NodeId, String)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), bindings: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { shape, data: Arc::new(data), op, requires_grad });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            shape: t.shape.clone(),
            data: t.shared(),
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.leaf(t, false)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> NodeId {
        let numel: usize = shape.iter().product();
        self.push(shape, vec![0.0; numel], Op::Leaf, false)
    }

    /// Bind a named parameter as a leaf. Frozen parameters enter with
    /// `requires_grad = false`, so no gradient is ever computed for them.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<NodeId> {
        let p = params
            .get(name)
            .ok_or_else(|| AutodiffError::Usage(format!("unknown parameter {name:?}")))?;
        let id = self.leaf(&p.value, !p.frozen);
        if !p.frozen {
            self.bindings.push((id, name.to_string()));
        }
        Ok(id)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor { shape: self.nodes[id.0].shape.clone(), data: Arc::clone(&self.nodes[id.0].data) }
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ---- forward ops -----------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let out: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add { a, b }, rg))
    }

    /// Broadcast add of a 1-D bias along the last axis.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        let c = *sa.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != c {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                detail: format!("{sa:?} + bias {sb:?}"),
            });
        }
        let bv = self.value(bias).to_vec();
        let out: Vec<f64> =
            self.value(a).iter().enumerate().map(|(i, x)| x + bv[i % c]).collect();
        let rg = self.rg(a) || self.rg(bias);
        let shape = sa.to_vec();
        Ok(self.push(shape, out, Op::AddBias { a, bias }, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op: "sub",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let out: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Sub { a, b }, rg))
    }

    /// Elementwise `(a - b)^2`.
    pub fn squared_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op: "squared_diff",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::SquaredDiff { a, b }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Relu { x }, rg)
    }

    /// Max over one axis. Gradient is routed to the argmax entry only; ties
    /// break to the lowest index.
    pub fn max_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "max_axis",
                detail: format!("axis {axis} of {sx:?}"),
            });
        }
        let outer: usize = sx[..axis].iter().product();
        let n = sx[axis];
        let inner: usize = sx[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        let xs = self.value(x);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = f64::NEG_INFINITY;
                let mut best_j = 0usize;
                for j in 0..n {
                    let v = xs[o * n * inner + j * inner + i];
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = best_j;
            }
        }
        let mut shape: Vec<usize> = sx[..axis].to_vec();
        shape.extend_from_slice(&sx[axis + 1..]);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::MaxAxis { x, axis, argmax }, rg))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::SumAll { x }, rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len().max(1) as f64;
        let s: f64 = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s / n], Op::MeanAll { x }, rg)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * factor).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale { x, factor }, rg)
    }

    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() || axis > 1 {
            return Err(AutodiffError::Usage(format!(
                "concat wants >= 1 part and axis 0/1, got {} parts axis {axis}",
                parts.len()
            )));
        }
        for &p in parts {
            if self.shape(p).len() != 2 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    detail: format!("non-2D part {:?}", self.shape(p)),
                });
            }
        }
        let fixed = 1 - axis;
        let fixed_dim = self.shape(parts[0])[fixed];
        for &p in parts {
            if self.shape(p)[fixed] != fixed_dim {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?}", self.shape(parts[0]), self.shape(p)),
                });
            }
        }
        let cat_dim: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let (rows, cols) = if axis == 0 { (cat_dim, fixed_dim) } else { (fixed_dim, cat_dim) };
        let mut out = vec![0.0; rows * cols];
        if axis == 0 {
            let mut row0 = 0usize;
            for &p in parts {
                let pr = self.shape(p)[0];
                out[row0 * cols..(row0 + pr) * cols].copy_from_slice(self.value(p));
                row0 += pr;
            }
        } else {
            let mut col0 = 0usize;
            for &p in parts {
                let pc = self.shape(p)[1];
                let pv = self.value(p);
                for r in 0..rows {
                    out[r * cols + col0..r * cols + col0 + pc]
                        .copy_from_slice(&pv[r * pc..(r + 1) * pc]);
                }
                col0 += pc;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![rows, cols], out, Op::Concat { axis, parts: parts.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(x), shape),
            });
        }
        let data = Arc::clone(&self.nodes[x.0].data);
        let rg = self.rg(x);
        self.nodes.push(Node { shape, data, op: Op::Reshape { x }, requires_grad: rg });
        self.grads.push(None);
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Gather rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: NodeId, indices: Arc<Vec<usize>>) -> Result<NodeId> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather_rows",
                detail: format!("{sx:?}"),
            });
        }
        let (rows, cols) = (sx[0], sx[1]);
        let mut out = vec![0.0; indices.len() * cols];
        let xs = self.value(x);
        for (r, &ix) in indices.iter().enumerate() {
            if ix >= rows {
                return Err(AutodiffError::Usage(format!(
                    "gather_rows index {ix} out of range {rows}"
                )));
            }
            out[r * cols..(r + 1) * cols].copy_from_slice(&xs[ix * cols..(ix + 1) * cols]);
        }
        let rg = self.rg(x);
        let n = indices.len();
        Ok(self.push(vec![n, cols], out, Op::GatherRows { x, indices }, rg))
    }

    /// Weighted combination of `k` source rows per output row:
    /// `out[r] = sum_j weights[r*k+j] * x[indices[r*k+j]]`.
    pub fn interp_rows(
        &mut self,
        x: NodeId,
        indices: Arc<Vec<usize>>,
        weights: Arc<Vec<f64>>,
        k: usize,
    ) -> Result<NodeId> {
        let sx = self.shape(x);
        if sx.len() != 2 || indices.len() != weights.len() || indices.len() % k != 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "interp_rows",
                detail: format!("src {:?}, {} indices, k={k}", sx, indices.len()),
            });
        }
        let (rows, cols) = (sx[0], sx[1]);
        let n = indices.len() / k;
        let mut out = vec![0.0; n * cols];
        let xs = self.value(x);
        for r in 0..n {
            for j in 0..k {
                let ix = indices[r * k + j];
                if ix >= rows {
                    return Err(AutodiffError::Usage(format!(
                        "interp_rows index {ix} out of range {rows}"
                    )));
                }
                let w = weights[r * k + j];
                for c in 0..cols {
                    out[r * cols + c] += w * xs[ix * cols + c];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![n, cols], out, Op::InterpRows { x, indices, weights, k }, rg))
    }

    /// Mean cross-entropy of `logits` ([batch, classes]) against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Arc<Vec<usize>>) -> Result<NodeId> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("logits {:?}, {} targets", s, targets.len()),
            });
        }
        let (batch, classes) = (s[0], s[1]);
        let xs = self.value(logits);
        let mut total = 0.0;
        for b in 0..batch {
            let row = &xs[b * classes..(b + 1) * classes];
            let t = targets[b];
            if t >= classes {
                return Err(AutodiffError::Usage(format!("target {t} out of {classes} classes")));
            }
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln() + mx;
            total -= row[t] - lse;
        }
        let rg = self.rg(logits);
        Ok(self.push(vec![1], vec![total / batch as f64], Op::CrossEntropy { logits, targets }, rg))
    }

    /// Mean squared error over all entries: `(1/N) * sum((x - y)^2)`.
    pub fn mse(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let d = self.squared_diff(x, y)?;
        Ok(self.mean_all(d))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(AutodiffError::Usage(format!(
                "backward from non-scalar output of shape {:?}",
                self.shape(root)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].clone() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    if self.rg(a) {
                        let bv = self.nodes[b.0].data.clone();
                        let ga = self.grad_buf(a);
                        gemm(m, n, k, &g, false, &bv, true, 1.0, ga);
                    }
                    if self.rg(b) {
                        let av = self.nodes[a.0].data.clone();
                        let gb = self.grad_buf(b);
                        gemm(k, m, n, &av, true, &g, false, 1.0, gb);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        accumulate(self.grad_buf(a), &g, 1.0);
                    }
                    if self.rg(b) {
                        accumulate(self.grad_buf(b), &g, 1.0);
                    }
                }
                Op::AddBias { a, bias } => {
                    let (a, bias) = (*a, *bias);
                    if self.rg(a) {
                        accumulate(self.grad_buf(a), &g, 1.0);
                    }
                    if self.rg(bias) {
                        let c = self.shape(bias)[0];
                        let gb = self.grad_buf(bias);
                        for (i, gv) in g.iter().enumerate() {
                            gb[i % c] += gv;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        accumulate(self.grad_buf(a), &g, 1.0);
                    }
                    if self.rg(b) {
                        accumulate(self.grad_buf(b), &g, -1.0);
                    }
                }
                Op::SquaredDiff { a, b } => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a.0].data.clone();
                    let bv = self.nodes[b.0].data.clone();
                    if self.rg(a) {
                        let ga = self.grad_buf(a);
                        for j in 0..g.len() {
                            ga[j] += g[j] * 2.0 * (av[j] - bv[j]);
                        }
                    }
                    if self.rg(b) {
                        let gb = self.grad_buf(b);
                        for j in 0..g.len() {
                            gb[j] -= g[j] * 2.0 * (av[j] - bv[j]);
                        }
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    let xv = self.nodes[x.0].data.clone();
                    if self.rg(x) {
                        let gx = self.grad_buf(x);
                        for j in 0..g.len() {
                            if xv[j] > 0.0 {
                                gx[j] += g[j];
                            }
                        }
                    }
                }
                Op::MaxAxis { x, axis, argmax } => {
                    let x = *x;
                    let axis = *axis;
                    let argmax = argmax.clone();
                    let sx = self.shape(x).to_vec();
                    let n = sx[axis];
                    let inner: usize = sx[axis + 1..].iter().product();
                    if self.rg(x) {
                        let gx = self.grad_buf(x);
                        for (oi, &j) in argmax.iter().enumerate() {
                            let (o, i2) = (oi / inner, oi % inner);
                            gx[o * n * inner + j * inner + i2] += g[oi];
                        }
                    }
                }
                Op::SumAll { x } => {
                    let x = *x;
                    if self.rg(x) {
                        accumulate_scalar(self.grad_buf(x), g[0]);
                    }
                }
                Op::MeanAll { x } => {
                    let x = *x;
                    if self.rg(x) {
                        let n = self.nodes[x.0].data.len().max(1) as f64;
                        accumulate_scalar(self.grad_buf(x), g[0] / n);
                    }
                }
                Op::Scale { x, factor } => {
                    let (x, factor) = (*x, *factor);
                    if self.rg(x) {
                        accumulate(self.grad_buf(x), &g, factor);
                    }
                }
                Op::Concat { axis, parts } => {
                    let axis = *axis;
                    let parts = parts.clone();
                    let out_cols = self.nodes[i].shape[1];
                    if axis == 0 {
                        let mut row0 = 0usize;
                        for p in parts {
                            let pr = self.shape(p)[0];
                            if self.rg(p) {
                                let seg = g[row0 * out_cols..(row0 + pr) * out_cols].to_vec();
                                accumulate(self.grad_buf(p), &seg, 1.0);
                            }
                            row0 += pr;
                        }
                    } else {
                        let rows = self.nodes[i].shape[0];
                        let mut col0 = 0usize;
                        for p in parts {
                            let pc = self.shape(p)[1];
                            if self.rg(p) {
                                let gp = self.grad_buf(p);
                                for r in 0..rows {
                                    for c in 0..pc {
                                        gp[r * pc + c] += g[r * out_cols + col0 + c];
                                    }
                                }
                            }
                            col0 += pc;
                        }
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    if self.rg(x) {
                        accumulate(self.grad_buf(x), &g, 1.0);
                    }
                }
                Op::GatherRows { x, indices } => {
                    let x = *x;
                    let indices = Arc::clone(indices);
                    let cols = self.shape(x)[1];
                    if self.rg(x) {
                        let gx = self.grad_buf(x);
                        for (r, &ix) in indices.iter().enumerate() {
                            for c in 0..cols {
                                gx[ix * cols + c] += g[r * cols + c];
                            }
                        }
                    }
                }
                Op::InterpRows { x, indices, weights, k } => {
                    let x = *x;
                    let k = *k;
                    let indices = Arc::clone(indices);
                    let weights = Arc::clone(weights);
                    let cols = self.shape(x)[1];
                    if self.rg(x) {
                        let gx = self.grad_buf(x);
                        let n = indices.len() / k;
                        for r in 0..n {
                            for j in 0..k {
                                let ix = indices[r * k + j];
                                let w = weights[r * k + j];
                                for c in 0..cols {
                                    gx[ix * cols + c] += w * g[r * cols + c];
                                }
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets } => {
                    let logits = *logits;
                    let targets = Arc::clone(targets);
                    let (batch, classes) = (self.shape(logits)[0], self.shape(logits)[1]);
                    let xs = self.nodes[logits.0].data.clone();
                    if self.rg(logits) {
                        let gl = self.grad_buf(logits);
                        for b in 0..batch {
                            let row = &xs[b * classes..(b + 1) * classes];
                            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let exps: Vec<f64> = row.iter().map(|&v| (v - mx).exp()).collect();
                            let denom: f64 = exps.iter().sum();
                            for c in 0..classes {
                                let soft = exps[c] / denom;
                                let onehot = if c == targets[b] { 1.0 } else { 0.0 };
                                gl[b * classes + c] += g[0] * (soft - onehot) / batch as f64;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<f64> {
        let numel = self.nodes[id.0].data.len();
        self.grads[id.0].get_or_insert_with(|| vec![0.0; numel])
    }

    /// Add the gradients of every bound parameter into `params` (by name).
    pub fn export_param_grads(&self, params: &mut ParamSet) -> Result<()> {
        for (id, name) in &self.bindings {
            if let Some(g) = self.grads[id.0].as_deref() {
                params.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Gradients of bound parameters, in binding order.
    pub fn param_grads(&self) -> Vec<(String, Vec<f64>)> {
        self.bindings
            .iter()
            .filter_map(|(id, name)| {
                self.grads[id.0].as_ref().map(|g| (name.clone(), g.clone()))
            })
            .collect()
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

fn accumulate_scalar(dst: &mut [f64], v: f64) {
    for d in dst.iter_mut() {
        *d += v;
    }
}

/// Row-major GEMM: `c = beta*c + a x b`, where `at`/`bt` read the stored
/// buffer as its transpose. `a` stores [m,k] (or [k,m] when `at`),
/// `b` stores [k,n] (or [n,k] when `bt`), `c` is [m,n].
fn gemm(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
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

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_returns_rhs() {
        let mut g = Graph::new();
        let eye = g.constant(&t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let a = g.constant(&t(&[3, 3], &[2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 7.0, 0.0, 1.5]));
        let c = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(c), g.value(a));
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[-1.0, 0.0, 2.0]), true);
        let y = g.relu(x);
        assert_eq!(g.value(y), &[0.0, 0.0, 2.0]);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        // subgradient at 0 is fixed to 0
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_squared_diff_hand_gradient() {
        // s = mean((x - y)^2), x=[1,2], y=[0,0] -> s=2.5, ds/dx = (x - y)
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]), true);
        let y = g.constant(&t(&[2], &[0.0, 0.0]));
        let s = g.mse(x, y).unwrap();
        assert!((g.value(s)[0] - 2.5).abs() < 1e-12);
        g.backward(s).unwrap();
        let gx = g.grad(x).unwrap();
        assert!((gx[0] - 1.0).abs() < 1e-12);
        assert!((gx[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.constant(&t(&[3], &[0.0, 0.0, 0.0]));
        let s = g.mse(x, y).unwrap();
        assert!((g.value(s)[0] - 14.0 / 3.0).abs() < 1e-12);

        let x2 = g.constant(&t(&[2], &[0.0, 0.0]));
        let y2 = g.constant(&t(&[2], &[3.0, 4.0]));
        let s2 = g.mse(x2, y2).unwrap();
        assert!((g.value(s2)[0] - 12.5).abs() < 1e-12);

        let s3 = g.mse(x2, x2).unwrap();
        assert_eq!(g.value(s3)[0], 0.0);
    }

    #[test]
    fn mse_shape_mismatch_errors() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[2], &[0.0, 0.0]));
        let y = g.constant(&t(&[3], &[0.0, 0.0, 0.0]));
        assert!(g.mse(x, y).is_err());
    }

    #[test]
    fn backward_from_non_scalar_is_usage_error() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]), true);
        let y = g.relu(x);
        let err = g.backward(y).unwrap_err();
        assert!(matches!(err, AutodiffError::Usage(_)));
    }

    #[test]
    fn max_axis_routes_gradient_to_lowest_tied_index() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[1, 3, 2], &[5.0, 1.0, 5.0, 2.0, 3.0, 2.0]), true);
        let m = g.max_axis(x, 1).unwrap();
        assert_eq!(g.shape(m), &[1, 2]);
        assert_eq!(g.value(m), &[5.0, 2.0]);
        let s = g.sum_all(m);
        g.backward(s).unwrap();
        // column 0 ties rows 0/1 -> row 0 wins; column 1 ties rows 1/2 -> row 1 wins
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_axis_conserves_gradient_mass() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[4, 3], &[0.3, -1.0, 2.0, 0.1, 0.2, 0.3, -5.0, 4.0, 1.0, 9.0, 8.0, 7.0]), true);
        let m = g.max_axis(x, 0).unwrap();
        let s = g.sum_all(m);
        g.backward(s).unwrap();
        let total: f64 = g.grad(x).unwrap().iter().sum();
        assert!((total - 3.0).abs() < 1e-12); // 3 reduced slices, each gets mass 1
    }

    #[test]
    fn gather_rows_accumulates_repeated_indices() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let idx = Arc::new(vec![0usize, 2, 0]);
        let y = g.gather_rows(x, idx).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 5.0, 6.0, 1.0, 2.0]);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_axis1_backward_splits() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[2, 1], &[1.0, 2.0]), true);
        let b = g.leaf(&t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]), true);
        let c = g.concat(1, &[a, b]).unwrap();
        assert_eq!(g.value(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = g.constant(&t(&[2, 3], &[1.0, 10.0, 100.0, 1000.0, 10000.0, 100000.0]));
        let d = g.squared_diff(c, w).unwrap();
        let s = g.sum_all(d);
        g.backward(s).unwrap();
        assert!(g.grad(a).is_some() && g.grad(b).is_some());
        assert_eq!(g.grad(a).unwrap().len(), 2);
        assert_eq!(g.grad(b).unwrap().len(), 4);
    }

    #[test]
    fn interp_rows_weights_and_backward() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), true);
        let idx = Arc::new(vec![0usize, 1]);
        let w = Arc::new(vec![0.25, 0.75]);
        let y = g.interp_rows(x, idx, w, 2).unwrap();
        assert_eq!(g.value(y), &[0.25, 0.75]);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25, 0.25, 0.75, 0.75]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let a = g.constant(&t(&[2, 3], &[0.1, -0.2, 0.3, 1.5, -2.5, 3.5]));
            let b = g.constant(&t(&[3, 2], &[0.7, 0.8, -0.9, 1.1, 1.3, -1.7]));
            let c = g.matmul(a, b).unwrap();
            let r = g.relu(c);
            g.value(r).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_param_gets_no_gradient() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true).unwrap();
        let mut g = Graph::new();
        let w = g.param(&params, "w").unwrap();
        let s = g.sum_all(w);
        // sum of constants: nothing requires grad, backward is a no-op walk
        g.backward(s).unwrap();
        assert!(g.grad(w).is_none());
        g.export_param_grads(&mut params).unwrap();
        assert!(params.get("w").unwrap().grad.is_none());
    }
}
