//! Define-by-run computation graph with reverse-mode gradients.
//!
//! Every value is a dense `rows x cols` grid of `f64`. Nodes are appended in
//! evaluation order, so the node index order is already a topological order and
//! the backward sweep simply walks it in reverse. Column-major batching is the
//! convention throughout: one sample per column.

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};

use super::param::{ParamId, ParamStore};
use super::TensorError;

/// Lower clamp applied to probabilities inside the cross-entropy losses.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise (or per-column, for softmax) nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    /// Softmax applied independently to every column.
    SoftmaxCols,
    /// Identity.
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::SoftmaxCols => "softmax-cols",
            Activation::Linear => "linear",
        }
    }
}

/// One source entry of a [`Graph::gather`]: flat row-major index into the
/// input and the coefficient it is multiplied by.
pub type GatherSrc = Option<(usize, f64)>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Act(Activation),
    ConcatRows,
    SliceRows { start: usize },
    Gather(Arc<Vec<GatherSrc>>),
    ColumnMap {
        mats: Arc<Vec<Array2<f64>>>,
        group: Arc<Vec<usize>>,
    },
    PowerNormalize { scale: f64, sum_sq: f64 },
    Sum,
    Mean,
    Bce { labels: Vec<f64> },
    MaskedMse { target: Vec<f64>, mask: Vec<bool> },
    CrossEntropy { labels: Vec<usize> },
    CrossEntropyLogits { labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear => "linear",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Act(a) => a.name(),
            Op::ConcatRows => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Gather(_) => "gather",
            Op::ColumnMap { .. } => "column_map",
            Op::PowerNormalize { .. } => "power_normalize",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Bce { .. } => "bce",
            Op::MaskedMse { .. } => "masked_mse",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::CrossEntropyLogits { .. } => "cross_entropy_logits",
        }
    }
}

/// A differentiable value with its accumulated gradient and lineage.
#[derive(Debug, Clone)]
pub struct Node {
    value: Array2<f64>,
    grad: Array2<f64>,
    op: Op,
    parents: Vec<NodeId>,
}

impl Node {
    pub fn value(&self) -> &Array2<f64> {
        &self.value
    }

    pub fn grad(&self) -> &Array2<f64> {
        &self.grad
    }

    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }

    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }
}

/// Tape of nodes for one forward pass. Rebuilt for every batch.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(NodeId, ParamId)>,
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

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].grad
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, parents: Vec<NodeId>) -> NodeId {
        let grad = Array2::zeros(value.dim());
        self.nodes.push(Node {
            value,
            grad,
            op,
            parents,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf node holding `value` (inputs, constants and parameters alike).
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, Vec::new())
    }

    /// Leaf node bound to a stored parameter; see [`Graph::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let node = self.leaf(store.get(id).value.clone());
        self.bindings.push((node, id));
        node
    }

    /// Add every bound leaf's gradient into its parameter's gradient buffer.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(node, pid) in &self.bindings {
            store.get_mut(pid).grad += &self.nodes[node.0].grad;
        }
    }

    /// Zero the gradients of every node.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
    }

    fn mismatch(
        op: &'static str,
        lhs: &'static str,
        a: (usize, usize),
        rhs: &'static str,
        b: (usize, usize),
    ) -> TensorError {
        TensorError::Shape {
            op,
            lhs,
            lhs_shape: a,
            rhs,
            rhs_shape: b,
        }
    }

    /// `W x + b`, with `b` broadcast over the batch columns of `x`.
    pub fn linear(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId, TensorError> {
        let (ws, bs, xs) = (self.shape(w), self.shape(b), self.shape(x));
        if ws.1 != xs.0 {
            return Err(Self::mismatch("linear", "W", ws, "x", xs));
        }
        if bs != (ws.0, 1) {
            return Err(Self::mismatch("linear", "W", ws, "b", bs));
        }
        let mut out = self.value(w).dot(self.value(x));
        out += self.value(b);
        Ok(self.push(out, Op::Linear, vec![w, b, x]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Self::mismatch("matmul", "a", sa, "b", sb));
        }
        let out = self.value(a).dot(self.value(b));
        Ok(self.push(out, Op::MatMul, vec![a, b]))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Self::mismatch(op, "a", sa, "b", sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add, vec![a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub, vec![a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul, vec![a, b]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(c), vec![a])
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(x);
        let out = match kind {
            Activation::Relu => v.mapv(|a| a.max(0.0)),
            Activation::Sigmoid => v.mapv(sigmoid),
            Activation::Tanh => v.mapv(f64::tanh),
            Activation::Linear => v.clone(),
            Activation::SoftmaxCols => {
                if v.ncols() == 0 || v.nrows() == 0 {
                    return Err(TensorError::Invalid {
                        op: "softmax-cols",
                        msg: format!("needs a non-empty input, got {:?}", v.dim()),
                    });
                }
                softmax_cols(v)
            }
        };
        Ok(self.push(out, Op::Act(kind), vec![x]))
    }

    /// Stack nodes with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let first = *parts.first().ok_or(TensorError::Invalid {
            op: "concat_rows",
            msg: "no inputs".into(),
        })?;
        let cols = self.shape(first).1;
        let mut rows = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.1 != cols {
                return Err(Self::mismatch(
                    "concat_rows",
                    "first",
                    self.shape(first),
                    "part",
                    sp,
                ));
            }
            rows += sp.0;
        }
        let mut out = Array2::zeros((rows, cols));
        let mut r = 0;
        for &p in parts {
            let v = self.value(p);
            out.slice_mut(s![r..r + v.nrows(), ..]).assign(v);
            r += v.nrows();
        }
        Ok(self.push(out, Op::ConcatRows, parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let sx = self.shape(x);
        if start + len > sx.0 {
            return Err(TensorError::Invalid {
                op: "slice_rows",
                msg: format!("rows {start}..{} out of range for {sx:?}", start + len),
            });
        }
        let out = self.value(x).slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows { start }, vec![x]))
    }

    /// Build a `rows x cols` node whose row-major entry `i` is
    /// `coef * x.flat[src]` for `src[i] = Some((src, coef))`, or zero.
    pub fn gather(
        &mut self,
        x: NodeId,
        rows: usize,
        cols: usize,
        src: Arc<Vec<GatherSrc>>,
    ) -> Result<NodeId, TensorError> {
        if src.len() != rows * cols {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: format!("{} sources for a {rows}x{cols} output", src.len()),
            });
        }
        let v = self.value(x);
        let n_in = v.len();
        let flat = v.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(rows * cols);
        for s in src.iter() {
            match *s {
                Some((i, c)) if i < n_in => out.push(c * flat[i]),
                Some((i, _)) => {
                    return Err(TensorError::Invalid {
                        op: "gather",
                        msg: format!("source index {i} out of range for {n_in} entries"),
                    })
                }
                None => out.push(0.0),
            }
        }
        let out = Array2::from_shape_vec((rows, cols), out).expect("shape checked");
        Ok(self.push(out, Op::Gather(src), vec![x]))
    }

    /// Apply a fixed matrix per column: `out[:, c] = mats[group[c]] * x[:, c]`.
    pub fn column_map(
        &mut self,
        x: NodeId,
        mats: Arc<Vec<Array2<f64>>>,
        group: Arc<Vec<usize>>,
    ) -> Result<NodeId, TensorError> {
        let sx = self.shape(x);
        if group.len() != sx.1 {
            return Err(TensorError::Invalid {
                op: "column_map",
                msg: format!("{} group entries for {} columns", group.len(), sx.1),
            });
        }
        let out_rows = mats.first().map(|m| m.nrows()).unwrap_or(0);
        for m in mats.iter() {
            if m.dim() != (out_rows, sx.0) {
                return Err(Self::mismatch("column_map", "matrix", m.dim(), "x", sx));
            }
        }
        if group.iter().any(|&g| g >= mats.len()) {
            return Err(TensorError::Invalid {
                op: "column_map",
                msg: "group index out of range".into(),
            });
        }
        let v = self.value(x);
        let mut out = Array2::zeros((out_rows, sx.1));
        for (c, &g) in group.iter().enumerate() {
            let col = mats[g].dot(&v.column(c));
            out.column_mut(c).assign(&col);
        }
        Ok(self.push(out, Op::ColumnMap { mats, group }, vec![x]))
    }

    /// Scale `x` so that the mean squared column norm equals `p_lin`.
    pub fn power_normalize(&mut self, x: NodeId, p_lin: f64) -> Result<NodeId, TensorError> {
        let v = self.value(x);
        let sum_sq: f64 = v.iter().map(|a| a * a).sum();
        if sum_sq <= 0.0 || !sum_sq.is_finite() {
            return Err(TensorError::ZeroPower);
        }
        let scale = (p_lin * v.ncols() as f64 / sum_sq).sqrt();
        let out = v * scale;
        Ok(self.push(out, Op::PowerNormalize { scale, sum_sq }, vec![x]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(out, Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Array2::from_elem((1, 1), v.sum() / v.len().max(1) as f64);
        self.push(out, Op::Mean, vec![x])
    }

    /// Binary cross-entropy averaged over all entries of `q`; probabilities
    /// are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, q: NodeId, labels: &[f64]) -> Result<NodeId, TensorError> {
        let v = self.value(q);
        if v.len() != labels.len() {
            return Err(TensorError::Invalid {
                op: "bce",
                msg: format!("{} labels for {} probabilities", labels.len(), v.len()),
            });
        }
        let n = v.len().max(1) as f64;
        let loss: f64 = v
            .iter()
            .zip(labels)
            .map(|(&q, &t)| {
                let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .sum::<f64>()
            / n;
        let out = Array2::from_elem((1, 1), loss);
        Ok(self.push(
            out,
            Op::Bce {
                labels: labels.to_vec(),
            },
            vec![q],
        ))
    }

    /// Mean squared error over the entries where `mask` is set; zero (with
    /// zero gradient) when the mask is empty.
    pub fn masked_mse(
        &mut self,
        pred: NodeId,
        target: &[f64],
        mask: &[bool],
    ) -> Result<NodeId, TensorError> {
        let v = self.value(pred);
        if v.len() != target.len() || v.len() != mask.len() {
            return Err(TensorError::Invalid {
                op: "masked_mse",
                msg: format!(
                    "{} predictions, {} targets, {} mask entries",
                    v.len(),
                    target.len(),
                    mask.len()
                ),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        let loss = if count == 0 {
            0.0
        } else {
            v.iter()
                .zip(target)
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|((&p, &t), _)| (p - t) * (p - t))
                .sum::<f64>()
                / count as f64
        };
        let out = Array2::from_elem((1, 1), loss);
        Ok(self.push(
            out,
            Op::MaskedMse {
                target: target.to_vec(),
                mask: mask.to_vec(),
            },
            vec![pred],
        ))
    }

    fn check_labels(
        &self,
        op: &'static str,
        x: NodeId,
        labels: &[usize],
    ) -> Result<(), TensorError> {
        let (rows, cols) = self.shape(x);
        if labels.len() != cols {
            return Err(TensorError::Invalid {
                op,
                msg: format!("{} labels for {cols} columns", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= rows) {
            return Err(TensorError::Invalid {
                op,
                msg: format!("label {bad} out of range for {rows} classes"),
            });
        }
        Ok(())
    }

    /// Categorical cross-entropy of per-column probability vectors against
    /// integer labels, averaged over columns.
    pub fn cross_entropy(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId, TensorError> {
        self.check_labels("cross_entropy", probs, labels)?;
        let v = self.value(probs);
        let n = v.ncols().max(1) as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(c, &l)| -v[[l, c]].max(PROB_CLAMP).ln())
            .sum::<f64>()
            / n;
        let out = Array2::from_elem((1, 1), loss);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                labels: labels.to_vec(),
            },
            vec![probs],
        ))
    }

    /// Categorical cross-entropy computed from logits through a stable
    /// log-sum-exp. Same clamp as [`Graph::cross_entropy`].
    pub fn cross_entropy_logits(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, TensorError> {
        self.check_labels("cross_entropy_logits", logits, labels)?;
        let v = self.value(logits);
        let n = v.ncols().max(1) as f64;
        let floor = PROB_CLAMP.ln();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(c, &l)| -log_softmax_at(v.column(c), l).max(floor))
            .sum::<f64>()
            / n;
        let out = Array2::from_elem((1, 1), loss);
        Ok(self.push(
            out,
            Op::CrossEntropyLogits {
                labels: labels.to_vec(),
            },
            vec![logits],
        ))
    }

    /// Reverse sweep from a scalar root. Gradients are added to whatever the
    /// nodes already hold, so repeated calls accumulate.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TensorError> {
        let (r, c) = self.shape(root);
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarRoot { rows: r, cols: c });
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            self.nodes[i].grad += &g;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, adj: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        let p = &node.parents;
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear => {
                let (w, b, x) = (p[0], p[1], p[2]);
                let mut dw = Array2::zeros(self.shape(w));
                general_mat_mul(1.0, g, &val(x).t(), 0.0, &mut dw);
                accum(adj, w, dw);
                let db = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                accum(adj, b, db);
                let mut dx = Array2::zeros(self.shape(x));
                general_mat_mul(1.0, &val(w).t(), g, 0.0, &mut dx);
                accum(adj, x, dx);
            }
            Op::MatMul => {
                let (a, b) = (p[0], p[1]);
                accum(adj, a, g.dot(&val(b).t()));
                accum(adj, b, val(a).t().dot(g));
            }
            Op::Add => {
                accum(adj, p[0], g.clone());
                accum(adj, p[1], g.clone());
            }
            Op::Sub => {
                accum(adj, p[0], g.clone());
                accum(adj, p[1], -g);
            }
            Op::Mul => {
                accum(adj, p[0], g * val(p[1]));
                accum(adj, p[1], g * val(p[0]));
            }
            Op::Scale(c) => accum(adj, p[0], g * *c),
            Op::Act(kind) => {
                let y = &node.value;
                let dx = match kind {
                    Activation::Relu => {
                        let mut d = g.clone();
                        d.zip_mut_with(val(p[0]), |d, &x| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                        d
                    }
                    Activation::Sigmoid => {
                        let mut d = g.clone();
                        d.zip_mut_with(y, |d, &y| *d *= y * (1.0 - y));
                        d
                    }
                    Activation::Tanh => {
                        let mut d = g.clone();
                        d.zip_mut_with(y, |d, &y| *d *= 1.0 - y * y);
                        d
                    }
                    Activation::Linear => g.clone(),
                    Activation::SoftmaxCols => {
                        let mut d = y * g;
                        let dots = d.sum_axis(Axis(0));
                        for (mut col, (ycol, dot)) in d
                            .columns_mut()
                            .into_iter()
                            .zip(y.columns().into_iter().zip(dots.iter()))
                        {
                            col.scaled_add(-dot, &ycol);
                        }
                        d
                    }
                };
                accum(adj, p[0], dx);
            }
            Op::ConcatRows => {
                let mut r = 0;
                for &part in p {
                    let rows = self.shape(part).0;
                    accum(adj, part, g.slice(s![r..r + rows, ..]).to_owned());
                    r += rows;
                }
            }
            Op::SliceRows { start } => {
                let mut d = Array2::zeros(self.shape(p[0]));
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                accum(adj, p[0], d);
            }
            Op::Gather(src) => {
                let sx = self.shape(p[0]);
                let mut d = vec![0.0; sx.0 * sx.1];
                for (gi, s) in g.iter().zip(src.iter()) {
                    if let Some((j, c)) = *s {
                        d[j] += c * gi;
                    }
                }
                accum(adj, p[0], Array2::from_shape_vec(sx, d).expect("shape"));
            }
            Op::ColumnMap { mats, group } => {
                let mut d = Array2::zeros(self.shape(p[0]));
                for (c, &grp) in group.iter().enumerate() {
                    let col = mats[grp].t().dot(&g.column(c));
                    d.column_mut(c).assign(&col);
                }
                accum(adj, p[0], d);
            }
            Op::PowerNormalize { scale, sum_sq } => {
                let x = val(p[0]);
                let gx: f64 = g.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                let mut d = g * *scale;
                d.scaled_add(-scale * gx / sum_sq, x);
                accum(adj, p[0], d);
            }
            Op::Sum => {
                let gs = g[[0, 0]];
                accum(adj, p[0], Array2::from_elem(self.shape(p[0]), gs));
            }
            Op::Mean => {
                let sx = self.shape(p[0]);
                let gs = g[[0, 0]] / (sx.0 * sx.1).max(1) as f64;
                accum(adj, p[0], Array2::from_elem(sx, gs));
            }
            Op::Bce { labels } => {
                let q = val(p[0]);
                let gs = g[[0, 0]] / q.len().max(1) as f64;
                let mut d = Array2::zeros(q.dim());
                for ((d, &q), &t) in d.iter_mut().zip(q.iter()).zip(labels) {
                    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&q) {
                        *d = -gs * (t / q - (1.0 - t) / (1.0 - q));
                    }
                }
                accum(adj, p[0], d);
            }
            Op::MaskedMse { target, mask } => {
                let v = val(p[0]);
                let count = mask.iter().filter(|&&m| m).count();
                let mut d = Array2::zeros(v.dim());
                if count > 0 {
                    let gs = g[[0, 0]] * 2.0 / count as f64;
                    for (((d, &p), &t), &m) in d.iter_mut().zip(v.iter()).zip(target).zip(mask) {
                        if m {
                            *d = gs * (p - t);
                        }
                    }
                }
                accum(adj, p[0], d);
            }
            Op::CrossEntropy { labels } => {
                let v = val(p[0]);
                let gs = g[[0, 0]] / v.ncols().max(1) as f64;
                let mut d = Array2::zeros(v.dim());
                for (c, &l) in labels.iter().enumerate() {
                    let q = v[[l, c]];
                    if q >= PROB_CLAMP {
                        d[[l, c]] = -gs / q;
                    }
                }
                accum(adj, p[0], d);
            }
            Op::CrossEntropyLogits { labels } => {
                let v = val(p[0]);
                let gs = g[[0, 0]] / v.ncols().max(1) as f64;
                let floor = PROB_CLAMP.ln();
                let mut d = softmax_cols(v);
                for (c, &l) in labels.iter().enumerate() {
                    let mut col = d.column_mut(c);
                    if log_softmax_at(v.column(c), l) < floor {
                        col.fill(0.0);
                    } else {
                        col[l] -= 1.0;
                        col *= gs;
                    }
                }
                accum(adj, p[0], d);
            }
        }
    }
}

fn accum(adj: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut adj[id.0] {
        Some(a) => *a += &g,
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_cols(v: &Array2<f64>) -> Array2<f64> {
    let mut out = v.clone();
    for mut col in out.columns_mut() {
        let max = col.fold(f64::NEG_INFINITY, |m, &a| m.max(a));
        col.mapv_inplace(|a| (a - max).exp());
        let z = col.sum();
        col /= z;
    }
    out
}

fn log_softmax_at(col: ndarray::ArrayView1<f64>, l: usize) -> f64 {
    let max = col.fold(f64::NEG_INFINITY, |m, &a| m.max(a));
    let lse = max + col.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
    col[l] - lse
}
