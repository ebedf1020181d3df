//! Minimal reverse-mode automatic differentiation over dense matrices and
//! sparse-valued edge vectors.
//!
//! A [`Tape`] owns every node of one computation. [`Value`] is a copyable
//! handle into the tape; [`EdgeVector`] pairs an `nnz x 1` value with the
//! [`SupportPattern`] that gives each entry its `(row, col)` position, so
//! learned graphs flow through the same machinery as dense parameters.
//!
//! `backward` computes adjoints in a scratch buffer and then adds them into
//! each node's persistent gradient accumulator, so running it twice without
//! `zero_grads` doubles every gradient exactly.

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, DenseMatrix, SupportPattern};
use rand::Rng;
use std::sync::Arc;

/// Handle to one tape node. Carries the shape so dimension checks never need
/// to borrow the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Value {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn is_vector(&self) -> bool {
        self.rows == 1 || self.cols == 1
    }

    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Per-edge values over a shared support pattern: the sparse carrier for
/// learned graphs. `values` is an `nnz x 1` tape node in pattern storage
/// order.
#[derive(Debug, Clone)]
pub struct EdgeVector {
    pub pattern: Arc<SupportPattern>,
    pub values: Value,
}

impl EdgeVector {
    /// Wraps existing per-edge values; the node length must equal the
    /// pattern's entry count.
    pub fn new(pattern: Arc<SupportPattern>, values: Value) -> Result<Self> {
        if values.shape() != (pattern.nnz(), 1) {
            return Err(Error::DimensionMismatch(format!(
                "edge vector needs {}x1 values, got {}x{}",
                pattern.nnz(),
                values.rows,
                values.cols
            )));
        }
        Ok(Self { pattern, values })
    }

    /// Leaf edge vector holding the values of `mat` aligned to `pattern`
    /// (zero for pattern positions absent from `mat`).
    pub fn from_csr(
        tape: &mut Tape,
        pattern: &Arc<SupportPattern>,
        mat: &CsrMatrix,
    ) -> Result<Self> {
        let vals = pattern.align_values(mat)?;
        let node = tape.leaf(DenseMatrix::new(pattern.nnz(), 1, vals)?);
        Ok(Self {
            pattern: Arc::clone(pattern),
            values: node,
        })
    }

    /// Assembles the sparse matrix this edge vector currently represents.
    pub fn to_csr(&self, tape: &Tape) -> Result<CsrMatrix> {
        self.pattern
            .with_values(tape.data(self.values).values().to_vec())
    }
}

enum Op {
    Leaf,
    Matmul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    SoftmaxRows(usize),
    SoftmaxVector(usize),
    Sum(usize),
    Dropout {
        input: usize,
        keep: Vec<bool>,
        inv_keep: f64,
    },
    Mix {
        mats: Vec<usize>,
        weights: usize,
    },
    SpmmConst {
        mat: Arc<CsrMatrix>,
        x: usize,
    },
    SpmmVar {
        weights: usize,
        pattern: Arc<SupportPattern>,
        x: usize,
    },
    SymNormalizeVar {
        weights: usize,
        pattern: Arc<SupportPattern>,
        floored_degree: Vec<f64>,
        degree_active: Vec<bool>,
    },
    Scatter {
        src: usize,
        map: Vec<usize>,
    },
    EdgeDot {
        h: usize,
        pattern: Arc<SupportPattern>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<usize>>,
        probs: DenseMatrix,
    },
    L2Penalty {
        params: Vec<usize>,
        coeff: f64,
    },
}

struct Node {
    data: DenseMatrix,
    grad: DenseMatrix,
    op: Op,
}

/// Records operations in topological order; replaying in reverse visits each
/// op exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node count marker for later [`Tape::truncate`].
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded at or after `mark`. Handles created before
    /// the mark stay valid, which lets a training loop rebuild the forward
    /// pass each epoch while keeping parameter leaves in place.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn data(&self, v: Value) -> &DenseMatrix {
        &self.nodes[v.id].data
    }

    /// Mutable access to a node's data; meant for optimizer updates of leaf
    /// parameters between forward passes.
    pub fn data_mut(&mut self, v: Value) -> &mut DenseMatrix {
        &mut self.nodes[v.id].data
    }

    pub fn grad(&self, v: Value) -> &DenseMatrix {
        &self.nodes[v.id].grad
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.values_mut().fill(0.0);
        }
    }

    fn push(&mut self, data: DenseMatrix, op: Op) -> Value {
        let (rows, cols) = data.shape();
        let grad = DenseMatrix::zeros(rows, cols);
        self.nodes.push(Node { data, grad, op });
        Value {
            id: self.nodes.len() - 1,
            rows,
            cols,
        }
    }

    pub fn leaf(&mut self, data: DenseMatrix) -> Value {
        self.push(data, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Value {
        self.leaf(DenseMatrix::new(1, 1, vec![v]).expect("finite scalar"))
    }

    // -- dense ops ----------------------------------------------------------

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        if a.cols != b.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        let out = self.data(a).matmul(self.data(b))?;
        Ok(self.push(out, Op::Matmul(a.id, b.id)))
    }

    /// Adds a `1 x m` row vector to every row of an `n x m` matrix.
    pub fn add_bias(&mut self, a: Value, bias: Value) -> Result<Value> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(Error::DimensionMismatch(format!(
                "bias 1x{} needed for {}x{} input, got {}x{}",
                a.cols, a.rows, a.cols, bias.rows, bias.cols
            )));
        }
        let mut out = self.data(a).clone();
        let b = self.data(bias).values().to_vec();
        for i in 0..out.n_rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(a.id, bias.id)))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        if a.shape() != b.shape() {
            return Err(Error::DimensionMismatch(format!(
                "add {}x{} and {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        let mut out = self.data(a).clone();
        for (o, v) in out.values_mut().iter_mut().zip(self.nodes[b.id].data.values()) {
            *o += v;
        }
        Ok(self.push(out, Op::Add(a.id, b.id)))
    }

    pub fn scale(&mut self, a: Value, c: f64) -> Value {
        let mut out = self.data(a).clone();
        for o in out.values_mut() {
            *o *= c;
        }
        self.push(out, Op::Scale(a.id, c))
    }

    pub fn relu(&mut self, a: Value) -> Value {
        let mut out = self.data(a).clone();
        for o in out.values_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        self.push(out, Op::Relu(a.id))
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let mut out = self.data(a).clone();
        for o in out.values_mut() {
            *o = 1.0 / (1.0 + (-*o).exp());
        }
        self.push(out, Op::Sigmoid(a.id))
    }

    pub fn softplus(&mut self, a: Value) -> Value {
        let mut out = self.data(a).clone();
        for o in out.values_mut() {
            // ln(1 + e^x) without overflow for large |x|
            *o = o.max(0.0) + (-o.abs()).exp().ln_1p();
        }
        self.push(out, Op::Softplus(a.id))
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: Value) -> Value {
        let mut out = self.data(a).clone();
        for i in 0..out.n_rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a.id))
    }

    /// Softmax over all entries of a row or column vector.
    pub fn softmax_vector(&mut self, a: Value) -> Result<Value> {
        if !a.is_vector() {
            return Err(Error::DimensionMismatch(format!(
                "softmax_vector needs a vector, got {}x{}",
                a.rows, a.cols
            )));
        }
        let mut out = self.data(a).clone();
        softmax_in_place(out.values_mut());
        Ok(self.push(out, Op::SoftmaxVector(a.id)))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: Value) -> Value {
        let total: f64 = self.data(a).values().iter().sum();
        let out = DenseMatrix::new(1, 1, vec![total]).expect("finite sum");
        self.push(out, Op::Sum(a.id))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)` during
    /// training; evaluation is the identity and records nothing.
    pub fn dropout<R: Rng>(
        &mut self,
        a: Value,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Value> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let inv_keep = 1.0 / (1.0 - p);
        let keep: Vec<bool> = (0..a.len()).map(|_| rng.gen::<f64>() >= p).collect();
        let mut out = self.data(a).clone();
        for (o, &k) in out.values_mut().iter_mut().zip(&keep) {
            *o = if k { *o * inv_keep } else { 0.0 };
        }
        Ok(self.push(
            out,
            Op::Dropout {
                input: a.id,
                keep,
                inv_keep,
            },
        ))
    }

    /// Weighted sum `sum_k weights[k] * mats[k]` with a trainable weight
    /// vector; gradients flow to both the weights and every summand.
    pub fn mix(&mut self, mats: &[Value], weights: Value) -> Result<Value> {
        if mats.is_empty() {
            return Err(Error::InvalidArgument("mix of empty list".into()));
        }
        if !weights.is_vector() || weights.len() != mats.len() {
            return Err(Error::DimensionMismatch(format!(
                "mix needs a weight vector of length {}, got {}x{}",
                mats.len(),
                weights.rows,
                weights.cols
            )));
        }
        let shape = mats[0].shape();
        if mats.iter().any(|m| m.shape() != shape) {
            return Err(Error::DimensionMismatch(
                "mix inputs must share one shape".into(),
            ));
        }
        let w = self.data(weights).values().to_vec();
        let mut out = DenseMatrix::zeros(shape.0, shape.1);
        for (m, &wk) in mats.iter().zip(&w) {
            for (o, v) in out.values_mut().iter_mut().zip(self.nodes[m.id].data.values()) {
                *o += wk * v;
            }
        }
        Ok(self.push(
            out,
            Op::Mix {
                mats: mats.iter().map(|m| m.id).collect(),
                weights: weights.id,
            },
        ))
    }

    // -- sparse ops ---------------------------------------------------------

    /// Propagation through a fixed sparse matrix; gradient flows to `x` only.
    pub fn spmm_const(&mut self, mat: &Arc<CsrMatrix>, x: Value) -> Result<Value> {
        if mat.n_cols() != x.rows {
            return Err(Error::DimensionMismatch(format!(
                "spmm {}x{} by {}x{}",
                mat.n_rows(),
                mat.n_cols(),
                x.rows,
                x.cols
            )));
        }
        let out = mat.spmm(self.data(x))?;
        Ok(self.push(
            out,
            Op::SpmmConst {
                mat: Arc::clone(mat),
                x: x.id,
            },
        ))
    }

    /// Propagation through the sparse matrix assembled from `edges`;
    /// gradients flow to the edge values and to `x`.
    pub fn spmm_var(&mut self, edges: &EdgeVector, x: Value) -> Result<Value> {
        let pattern = &edges.pattern;
        if pattern.n_cols() != x.rows {
            return Err(Error::DimensionMismatch(format!(
                "spmm_var {}x{} by {}x{}",
                pattern.n_rows(),
                pattern.n_cols(),
                x.rows,
                x.cols
            )));
        }
        let w = self.data(edges.values).values();
        let xd = self.data(x);
        let mut out = DenseMatrix::zeros(pattern.n_rows(), x.cols);
        for i in 0..pattern.n_rows() {
            let (s, e) = (pattern.row_offsets()[i], pattern.row_offsets()[i + 1]);
            let mut acc = vec![0.0; x.cols];
            for k in s..e {
                let wk = w[k];
                let src = xd.row(pattern.col_indices()[k]);
                for (a, v) in acc.iter_mut().zip(src) {
                    *a += wk * v;
                }
            }
            out.row_mut(i).copy_from_slice(&acc);
        }
        Ok(self.push(
            out,
            Op::SpmmVar {
                weights: edges.values.id,
                pattern: Arc::clone(pattern),
                x: x.id,
            },
        ))
    }

    /// Differentiable symmetric degree normalization of a learned graph.
    /// Entry `(i, j)` becomes `w / sqrt(max(d_i, eps) * max(d_j, eps))`
    /// where `d` are the row sums of the edge values; the backward pass flows
    /// through both the entry and the two degree sums it contributes to.
    pub fn sym_normalize_var(&mut self, edges: &EdgeVector, eps: f64) -> Result<EdgeVector> {
        let pattern = Arc::clone(&edges.pattern);
        let w = self.data(edges.values).values();
        let n = pattern.n_rows();
        let mut degree = vec![0.0; n];
        for (i, j, k) in pattern.entries() {
            if w[k] < 0.0 {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: w[k],
                });
            }
            degree[i] += w[k];
        }
        let degree_active: Vec<bool> = degree.iter().map(|&d| d >= eps).collect();
        let floored_degree: Vec<f64> = degree.iter().map(|&d| d.max(eps)).collect();
        let inv_sqrt: Vec<f64> = floored_degree.iter().map(|&d| 1.0 / d.sqrt()).collect();
        let mut out = vec![0.0; pattern.nnz()];
        for (i, j, k) in pattern.entries() {
            out[k] = w[k] * inv_sqrt[i] * inv_sqrt[j];
        }
        let node = self.push(
            DenseMatrix::new(pattern.nnz(), 1, out)?,
            Op::SymNormalizeVar {
                weights: edges.values.id,
                pattern: Arc::clone(&pattern),
                floored_degree,
                degree_active,
            },
        );
        EdgeVector::new(pattern, node)
    }

    /// Scatters edge values into a (usually larger) pattern on top of a
    /// constant base vector: `out = base; out[map[k]] += src[k]`. Used to
    /// align a learned graph onto a union support or to add fixed self
    /// loops before normalization.
    pub fn scatter_edges(
        &mut self,
        src: &EdgeVector,
        target: &Arc<SupportPattern>,
        base: Vec<f64>,
    ) -> Result<EdgeVector> {
        if base.len() != target.nnz() {
            return Err(Error::DimensionMismatch(format!(
                "base length {} vs target nnz {}",
                base.len(),
                target.nnz()
            )));
        }
        let mut map = vec![0usize; src.pattern.nnz()];
        for (i, j, k) in src.pattern.entries() {
            map[k] = target
                .position_of(i, j)
                .ok_or(Error::SupportEscape { row: i, col: j })?;
        }
        let mut out = base;
        let sv = self.data(src.values).values();
        for (k, &m) in map.iter().enumerate() {
            out[m] += sv[k];
        }
        let node = self.push(
            DenseMatrix::new(target.nnz(), 1, out)?,
            Op::Scatter {
                src: src.values.id,
                map,
            },
        );
        EdgeVector::new(Arc::clone(target), node)
    }

    /// Per-edge dot products of endpoint rows of `h`: entry `k = (u, v)`
    /// becomes `h[u, :] . h[v, :]`, computed edgewise without forming the
    /// dense Gram matrix.
    pub fn edge_dot(&mut self, h: Value, pattern: &Arc<SupportPattern>) -> Result<Value> {
        if pattern.n_rows() != h.rows || pattern.n_cols() != h.rows {
            return Err(Error::DimensionMismatch(format!(
                "edge_dot pattern {}x{} vs {} node embeddings",
                pattern.n_rows(),
                pattern.n_cols(),
                h.rows
            )));
        }
        let hd = self.data(h);
        let mut out = vec![0.0; pattern.nnz()];
        for (u, v, k) in pattern.entries() {
            out[k] = hd
                .row(u)
                .iter()
                .zip(hd.row(v))
                .map(|(a, b)| a * b)
                .sum();
        }
        let data = DenseMatrix::new(pattern.nnz(), 1, out)?;
        Ok(self.push(
            data,
            Op::EdgeDot {
                h: h.id,
                pattern: Arc::clone(pattern),
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` over the rows listed in
    /// `mask`, with the softmax fused in for stability.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Value,
        labels: &Arc<Vec<usize>>,
        mask: &Arc<Vec<usize>>,
    ) -> Result<Value> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        if labels.len() != logits.rows {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} logit rows",
                labels.len(),
                logits.rows
            )));
        }
        for &label in labels.iter() {
            if label >= logits.cols {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: logits.cols,
                });
            }
        }
        if let Some(&r) = mask.iter().find(|&&r| r >= logits.rows) {
            return Err(Error::InvalidArgument(format!(
                "mask row {r} out of range for {} rows",
                logits.rows
            )));
        }
        let ld = self.data(logits);
        let mut probs = ld.clone();
        for i in 0..probs.n_rows() {
            softmax_in_place(probs.row_mut(i));
        }
        let mut total = 0.0;
        for &r in mask.iter() {
            let row = ld.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[r]];
        }
        let loss = DenseMatrix::new(1, 1, vec![total / mask.len() as f64])?;
        Ok(self.push(
            loss,
            Op::SoftmaxCrossEntropy {
                logits: logits.id,
                labels: Arc::clone(labels),
                mask: Arc::clone(mask),
                probs,
            },
        ))
    }

    /// `coeff * sum_p ||p||^2` over the given parameters.
    pub fn l2_penalty(&mut self, params: &[Value], coeff: f64) -> Result<Value> {
        if coeff < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative l2 coefficient {coeff}"
            )));
        }
        let total: f64 = params
            .iter()
            .map(|p| self.data(*p).values().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let out = DenseMatrix::new(1, 1, vec![coeff * total])?;
        Ok(self.push(
            out,
            Op::L2Penalty {
                params: params.iter().map(|p| p.id).collect(),
                coeff,
            },
        ))
    }

    // -- backward -----------------------------------------------------------

    /// Reverse pass from a scalar loss. Adjoints are computed in a scratch
    /// buffer and added into each node's persistent gradient.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        if loss.shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward target must be a scalar, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let mut adj: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.id] = Some(DenseMatrix::new(1, 1, vec![1.0])?);

        for id in (0..=loss.id).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &g, &mut adj);
            let acc = &mut self.nodes[id].grad;
            for (a, v) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += v;
            }
        }
        Ok(())
    }

    fn adj_mut<'a>(
        adj: &'a mut [Option<DenseMatrix>],
        nodes: &[Node],
        id: usize,
    ) -> &'a mut DenseMatrix {
        let (r, c) = nodes[id].data.shape();
        adj[id].get_or_insert_with(|| DenseMatrix::zeros(r, c))
    }

    fn propagate(&self, id: usize, g: &DenseMatrix, adj: &mut [Option<DenseMatrix>]) {
        let nodes = &self.nodes;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ad, bd) = (&nodes[*a].data, &nodes[*b].data);
                {
                    let da = Self::adj_mut(adj, nodes, *a);
                    for i in 0..ad.n_rows() {
                        for k in 0..ad.n_cols() {
                            let dot: f64 = g.row(i).iter().zip(bd.row(k)).map(|(x, y)| x * y).sum();
                            da.set(i, k, da.get(i, k) + dot);
                        }
                    }
                }
                let db = Self::adj_mut(adj, nodes, *b);
                for i in 0..ad.n_rows() {
                    for k in 0..ad.n_cols() {
                        let aik = ad.get(i, k);
                        if aik == 0.0 {
                            continue;
                        }
                        let src = g.row(i);
                        let dst = db.row_mut(k);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += aik * s;
                        }
                    }
                }
            }
            Op::AddBias(a, b) => {
                {
                    let da = Self::adj_mut(adj, nodes, *a);
                    for (d, s) in da.values_mut().iter_mut().zip(g.values()) {
                        *d += s;
                    }
                }
                let db = Self::adj_mut(adj, nodes, *b);
                for i in 0..g.n_rows() {
                    for (d, s) in db.values_mut().iter_mut().zip(g.row(i)) {
                        *d += s;
                    }
                }
            }
            Op::Add(a, b) => {
                for target in [a, b] {
                    let dt = Self::adj_mut(adj, nodes, *target);
                    for (d, s) in dt.values_mut().iter_mut().zip(g.values()) {
                        *d += s;
                    }
                }
            }
            Op::Scale(a, c) => {
                let da = Self::adj_mut(adj, nodes, *a);
                for (d, s) in da.values_mut().iter_mut().zip(g.values()) {
                    *d += c * s;
                }
            }
            Op::Relu(a) => {
                let input = nodes[*a].data.values().to_vec();
                let da = Self::adj_mut(adj, nodes, *a);
                for ((d, s), x) in da.values_mut().iter_mut().zip(g.values()).zip(&input) {
                    if *x > 0.0 {
                        *d += s;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = nodes[id].data.values().to_vec();
                let da = Self::adj_mut(adj, nodes, *a);
                for ((d, s), y) in da.values_mut().iter_mut().zip(g.values()).zip(&out) {
                    *d += s * y * (1.0 - y);
                }
            }
            Op::Softplus(a) => {
                let input = nodes[*a].data.values().to_vec();
                let da = Self::adj_mut(adj, nodes, *a);
                for ((d, s), x) in da.values_mut().iter_mut().zip(g.values()).zip(&input) {
                    *d += s / (1.0 + (-x).exp());
                }
            }
            Op::SoftmaxRows(a) => {
                let out = nodes[id].data.clone();
                let da = Self::adj_mut(adj, nodes, *a);
                for i in 0..out.n_rows() {
                    softmax_backward_row(out.row(i), g.row(i), da.row_mut(i));
                }
            }
            Op::SoftmaxVector(a) => {
                let out = nodes[id].data.clone();
                let da = Self::adj_mut(adj, nodes, *a);
                softmax_backward_row(out.values(), g.values(), da.values_mut());
            }
            Op::Sum(a) => {
                let s = g.get(0, 0);
                let da = Self::adj_mut(adj, nodes, *a);
                for d in da.values_mut() {
                    *d += s;
                }
            }
            Op::Dropout {
                input,
                keep,
                inv_keep,
            } => {
                let da = Self::adj_mut(adj, nodes, *input);
                for ((d, s), &k) in da.values_mut().iter_mut().zip(g.values()).zip(keep) {
                    if k {
                        *d += s * inv_keep;
                    }
                }
            }
            Op::Mix { mats, weights } => {
                let w = nodes[*weights].data.values().to_vec();
                for (m, &wk) in mats.iter().zip(&w) {
                    let dm = Self::adj_mut(adj, nodes, *m);
                    for (d, s) in dm.values_mut().iter_mut().zip(g.values()) {
                        *d += wk * s;
                    }
                }
                let dots: Vec<f64> = mats
                    .iter()
                    .map(|m| {
                        nodes[*m]
                            .data
                            .values()
                            .iter()
                            .zip(g.values())
                            .map(|(x, y)| x * y)
                            .sum()
                    })
                    .collect();
                let dw = Self::adj_mut(adj, nodes, *weights);
                for (d, dot) in dw.values_mut().iter_mut().zip(dots) {
                    *d += dot;
                }
            }
            Op::SpmmConst { mat, x } => {
                let dx = Self::adj_mut(adj, nodes, *x);
                for i in 0..mat.n_rows() {
                    let (cols, vals) = mat.row(i);
                    let src = g.row(i);
                    for (&j, &a) in cols.iter().zip(vals) {
                        let dst = dx.row_mut(j);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += a * s;
                        }
                    }
                }
            }
            Op::SpmmVar {
                weights,
                pattern,
                x,
            } => {
                let xd = nodes[*x].data.clone();
                let w = nodes[*weights].data.values().to_vec();
                {
                    let dw = Self::adj_mut(adj, nodes, *weights);
                    for (i, j, k) in pattern.entries() {
                        let dot: f64 = g.row(i).iter().zip(xd.row(j)).map(|(a, b)| a * b).sum();
                        dw.values_mut()[k] += dot;
                    }
                }
                let dx = Self::adj_mut(adj, nodes, *x);
                for (i, j, k) in pattern.entries() {
                    let wk = w[k];
                    let src = g.row(i);
                    let dst = dx.row_mut(j);
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wk * s;
                    }
                }
            }
            Op::SymNormalizeVar {
                weights,
                pattern,
                floored_degree,
                degree_active,
            } => {
                let out = nodes[id].data.values().to_vec();
                let inv_sqrt: Vec<f64> =
                    floored_degree.iter().map(|&d| 1.0 / d.sqrt()).collect();
                // per-row accumulators of g*n for the degree terms
                let n = pattern.n_rows();
                let mut row_acc = vec![0.0; n];
                for (i, j, k) in pattern.entries() {
                    let gn = g.values()[k] * out[k];
                    row_acc[i] += gn;
                    row_acc[j] += gn;
                }
                let dw = Self::adj_mut(adj, nodes, *weights);
                for (i, j, k) in pattern.entries() {
                    let mut d = g.values()[k] * inv_sqrt[i] * inv_sqrt[j];
                    if degree_active[i] {
                        d -= 0.5 * row_acc[i] / floored_degree[i];
                    }
                    dw.values_mut()[k] += d;
                }
            }
            Op::Scatter { src, map } => {
                let ds = Self::adj_mut(adj, nodes, *src);
                for (k, &m) in map.iter().enumerate() {
                    ds.values_mut()[k] += g.values()[m];
                }
            }
            Op::EdgeDot { h, pattern } => {
                let hd = nodes[*h].data.clone();
                let dh = Self::adj_mut(adj, nodes, *h);
                for (u, v, k) in pattern.entries() {
                    let gk = g.values()[k];
                    if gk == 0.0 {
                        continue;
                    }
                    for c in 0..hd.n_cols() {
                        dh.set(u, c, dh.get(u, c) + gk * hd.get(v, c));
                        dh.set(v, c, dh.get(v, c) + gk * hd.get(u, c));
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                mask,
                probs,
            } => {
                let scale = g.get(0, 0) / mask.len() as f64;
                let dl = Self::adj_mut(adj, nodes, *logits);
                for &r in mask.iter() {
                    for c in 0..probs.n_cols() {
                        let indicator = if c == labels[r] { 1.0 } else { 0.0 };
                        dl.set(r, c, dl.get(r, c) + scale * (probs.get(r, c) - indicator));
                    }
                }
            }
            Op::L2Penalty { params, coeff } => {
                let s = 2.0 * coeff * g.get(0, 0);
                for p in params {
                    let pd = nodes[*p].data.values().to_vec();
                    let dp = Self::adj_mut(adj, nodes, *p);
                    for (d, v) in dp.values_mut().iter_mut().zip(pd) {
                        *d += s * v;
                    }
                }
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// dx = s .* (g - <g, s>) for one softmax row.
fn softmax_backward_row(s: &[f64], g: &[f64], dx: &mut [f64]) {
    let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((d, &sv), &gv) in dx.iter_mut().zip(s).zip(g) {
        *d += sv * (gv - dot);
    }
}
