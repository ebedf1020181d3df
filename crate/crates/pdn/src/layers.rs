//! Pathfinder building blocks: neurons and layers over multiplex adjacency
//! inputs, the deep per-edge MLP, the spectral GCN head, edge convolutions,
//! multi-scale mixing, and the linear attention variant.
//!
//! Every learned graph lives on a fixed support pattern and nonlinearities
//! follow the masked convention: they are applied to stored entries only, so
//! the output support never escapes the union of the input edge sets.

use crate::autodiff::{EdgeVector, Tape, Value};
use crate::error::{Error, Result};
use crate::sparse::{support_union, CsrMatrix, DenseMatrix, SupportPattern, DEGREE_EPS};
use rand::Rng;
use std::sync::Arc;
use std::str::FromStr;

/// Elementwise nonlinearity choices for pathfinder outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softplus,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, v: Value) -> Value {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::Sigmoid => tape.sigmoid(v),
            Activation::Softplus => tape.softplus(v),
            Activation::Identity => v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softplus" => Ok(Activation::Softplus),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation '{other}'"
            ))),
        }
    }
}

/// Glorot-uniform parameter matrix.
pub fn glorot_uniform<R: Rng>(tape: &mut Tape, rows: usize, cols: usize, rng: &mut R) -> Value {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let vals: Vec<f64> = (0..rows * cols)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit)
        .collect();
    tape.leaf(DenseMatrix::new(rows, cols, vals).expect("finite init"))
}

pub fn zeros_param(tape: &mut Tape, rows: usize, cols: usize) -> Value {
    tape.leaf(DenseMatrix::zeros(rows, cols))
}

// ---------------------------------------------------------------------------
// Pathfinder neurons and layers
// ---------------------------------------------------------------------------

/// One pathfinder neuron: an activated weighted sum of input graphs with no
/// bias term, so structural zeros stay zero and the whole computation stays
/// sparse.
#[derive(Debug, Clone)]
pub struct PathfinderNeuron {
    pub betas: Value,
    pub activation: Activation,
}

impl PathfinderNeuron {
    pub fn init<R: Rng>(
        tape: &mut Tape,
        n_inputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            betas: glorot_uniform(tape, n_inputs, 1, rng),
            activation,
        }
    }
}

/// Wraps each adjacency as a constant edge vector on the shared union
/// support, the input form every pathfinder layer consumes.
pub fn adjacency_edge_vectors(
    tape: &mut Tape,
    adjs: &[&CsrMatrix],
) -> Result<(Arc<SupportPattern>, Vec<EdgeVector>)> {
    let pattern = Arc::new(support_union(adjs)?);
    let inputs = adjs
        .iter()
        .map(|a| EdgeVector::from_csr(tape, &pattern, a))
        .collect::<Result<Vec<_>>>()?;
    Ok((pattern, inputs))
}

fn shared_pattern(inputs: &[EdgeVector]) -> Result<Arc<SupportPattern>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no input graphs".into()))?;
    for ev in &inputs[1..] {
        if !Arc::ptr_eq(&ev.pattern, &first.pattern) {
            return Err(Error::DimensionMismatch(
                "input edge vectors must share one support pattern".into(),
            ));
        }
    }
    Ok(Arc::clone(&first.pattern))
}

/// `G = sigma(sum_i beta_i * A_i)` evaluated on the shared union support.
pub fn pathfinder_neuron_forward(
    tape: &mut Tape,
    inputs: &[EdgeVector],
    neuron: &PathfinderNeuron,
) -> Result<EdgeVector> {
    let pattern = shared_pattern(inputs)?;
    let values: Vec<Value> = inputs.iter().map(|ev| ev.values).collect();
    let pre = tape.mix(&values, neuron.betas)?;
    let out = neuron.activation.apply(tape, pre);
    EdgeVector::new(pattern, out)
}

/// One pathfinder layer: `q` independent neurons over the same inputs,
/// producing `q` learned graphs on one support.
pub fn pathfinder_layer_forward(
    tape: &mut Tape,
    inputs: &[EdgeVector],
    neurons: &[PathfinderNeuron],
) -> Result<Vec<EdgeVector>> {
    if neurons.is_empty() {
        return Err(Error::InvalidArgument("pathfinder layer needs >= 1 neuron".into()));
    }
    neurons
        .iter()
        .map(|n| pathfinder_neuron_forward(tape, inputs, n))
        .collect()
}

// ---------------------------------------------------------------------------
// Deep per-edge MLP
// ---------------------------------------------------------------------------

/// Per-edge feed-forward aggregator: ReLU hidden layers and a configurable
/// output activation producing one weight per edge.
#[derive(Debug, Clone)]
pub struct PathfinderMlp {
    /// (weight, bias) per layer; the last layer maps to a single column.
    pub layers: Vec<(Value, Value)>,
    pub out_act: Activation,
}

impl PathfinderMlp {
    pub fn init<R: Rng>(
        tape: &mut Tape,
        in_dim: usize,
        hidden: &[usize],
        out_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &h in hidden {
            let w = glorot_uniform(tape, prev, h, rng);
            let b = zeros_param(tape, 1, h);
            layers.push((w, b));
            prev = h;
        }
        let w = glorot_uniform(tape, prev, 1, rng);
        let b = zeros_param(tape, 1, 1);
        layers.push((w, b));
        Self { layers, out_act }
    }

    pub fn params(&self) -> Vec<Value> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].0.rows()
    }
}

/// Runs the per-edge MLP over features row-aligned with the pattern storage
/// order and returns the learned graph.
pub fn pathfinder_mlp_forward(
    tape: &mut Tape,
    edge_features: Value,
    mlp: &PathfinderMlp,
    pattern: &Arc<SupportPattern>,
) -> Result<EdgeVector> {
    if edge_features.rows() != pattern.nnz() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} pattern entries",
            edge_features.rows(),
            pattern.nnz()
        )));
    }
    if edge_features.cols() != mlp.in_dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature columns but the aggregator expects {}",
            edge_features.cols(),
            mlp.in_dim()
        )));
    }
    let mut h = edge_features;
    let last = mlp.layers.len() - 1;
    for (i, (w, b)) in mlp.layers.iter().enumerate() {
        let lin = tape.matmul(h, *w)?;
        let pre = tape.add_bias(lin, *b)?;
        h = if i < last {
            tape.relu(pre)
        } else {
            mlp.out_act.apply(tape, pre)
        };
    }
    EdgeVector::new(Arc::clone(pattern), h)
}

// ---------------------------------------------------------------------------
// Exclusive-or reference construction
// ---------------------------------------------------------------------------

/// Fixed two-neuron module computing `h1 = relu(a' + a'')`,
/// `h2 = relu(a' + a'' - 1)` and the edge weight `h1 - 2*h2`, which is the
/// exclusive-or of two binary edge layers.
pub fn xor_reference_weights(tape: &mut Tape) -> PathfinderMlp {
    let w1 = tape.leaf(DenseMatrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap());
    let b1 = tape.leaf(DenseMatrix::new(1, 2, vec![0.0, -1.0]).unwrap());
    let w2 = tape.leaf(DenseMatrix::new(2, 1, vec![1.0, -2.0]).unwrap());
    let b2 = tape.leaf(DenseMatrix::new(1, 1, vec![0.0]).unwrap());
    PathfinderMlp {
        layers: vec![(w1, b1), (w2, b2)],
        out_act: Activation::Identity,
    }
}

/// `(a', a'', h1, h2, weight)` for all four binary inputs, evaluated through
/// the reference module. All arithmetic is exact on these inputs.
pub fn xor_reference_table() -> [(f64, f64, f64, f64, f64); 4] {
    let mut tape = Tape::new();
    let mlp = xor_reference_weights(&mut tape);
    let inputs = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
    let x = tape.leaf(
        DenseMatrix::new(4, 2, inputs.iter().flat_map(|&(a, b)| [a, b]).collect()).unwrap(),
    );
    let lin1 = tape.matmul(x, mlp.layers[0].0).unwrap();
    let pre1 = tape.add_bias(lin1, mlp.layers[0].1).unwrap();
    let hidden = tape.relu(pre1);
    let lin2 = tape.matmul(hidden, mlp.layers[1].0).unwrap();
    let alpha = tape.add_bias(lin2, mlp.layers[1].1).unwrap();
    let h = tape.data(hidden).clone();
    let a = tape.data(alpha).clone();
    let mut rows = [(0.0, 0.0, 0.0, 0.0, 0.0); 4];
    for (i, &(a1, a2)) in inputs.iter().enumerate() {
        rows[i] = (a1, a2, h.get(i, 0), h.get(i, 1), a.get(i, 0));
    }
    rows
}

// ---------------------------------------------------------------------------
// Spectral GCN head
// ---------------------------------------------------------------------------

/// Two-hop spectral convolution head driven by a learned propagation graph.
#[derive(Debug, Clone)]
pub struct GcnHead {
    pub w1: Value,
    pub w2: Value,
    pub dropout: f64,
}

impl GcnHead {
    pub fn init<R: Rng>(
        tape: &mut Tape,
        in_dim: usize,
        hidden: usize,
        n_classes: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: glorot_uniform(tape, in_dim, hidden, rng),
            w2: glorot_uniform(tape, hidden, n_classes, rng),
            dropout,
        }
    }

    pub fn params(&self) -> Vec<Value> {
        vec![self.w1, self.w2]
    }
}

/// Adds constant self loops of the given weight to a learned graph,
/// extending its pattern with the diagonal.
pub fn with_self_loops(tape: &mut Tape, graph: &EdgeVector, weight: f64) -> Result<EdgeVector> {
    let target = Arc::new(graph.pattern.with_diagonal()?);
    let base: Vec<f64> = target
        .entries()
        .map(|(i, j, _)| if i == j { weight } else { 0.0 })
        .collect();
    tape.scatter_edges(graph, &target, base)
}

/// Normalizes the learned graph (optionally after adding unit self loops)
/// and returns the propagation edge vector used by both hops.
pub fn normalized_propagation(
    tape: &mut Tape,
    graph: &EdgeVector,
    self_loops: bool,
) -> Result<EdgeVector> {
    let g = if self_loops {
        with_self_loops(tape, graph, 1.0)?
    } else {
        graph.clone()
    };
    tape.sym_normalize_var(&g, DEGREE_EPS)
}

/// Two-hop forward pass over the learned graph:
/// `Z = N (dropout(relu(N (dropout(X) W1))) W2)` with
/// `N = sym_normalize(G + I)`. Raw logits are returned; the softmax lives in
/// the loss.
pub fn gcn_forward<R: Rng>(
    tape: &mut Tape,
    graph: &EdgeVector,
    x: Value,
    head: &GcnHead,
    train: bool,
    self_loops: bool,
    rng: &mut R,
) -> Result<Value> {
    let norm = normalized_propagation(tape, graph, self_loops)?;
    let d0 = tape.dropout(x, head.dropout, train, rng)?;
    let xw = tape.matmul(d0, head.w1)?;
    let hop1 = tape.spmm_var(&norm, xw)?;
    let h = tape.relu(hop1);
    let d1 = tape.dropout(h, head.dropout, train, rng)?;
    let hw = tape.matmul(d1, head.w2)?;
    tape.spmm_var(&norm, hw)
}

// ---------------------------------------------------------------------------
// Edge convolution variant
// ---------------------------------------------------------------------------

/// Per-edge scores for one modality: node embeddings
/// `H = relu(X W' + b)` scored as `sigma_hat(H[u,:] . H[v,:])` on the stored
/// edges of a binary adjacency, never materializing the dense Gram matrix.
pub fn edgeconv_scores(
    tape: &mut Tape,
    adj: &CsrMatrix,
    pattern: &Arc<SupportPattern>,
    x: Value,
    w: Value,
    b: Value,
    score_act: Activation,
) -> Result<EdgeVector> {
    if adj.values().iter().any(|&v| v != 1.0) {
        return Err(Error::InvalidGraph(
            "edge convolution expects a binary adjacency".into(),
        ));
    }
    if pattern.nnz() != adj.nnz() {
        return Err(Error::DimensionMismatch(
            "pattern does not match the adjacency support".into(),
        ));
    }
    let lin = tape.matmul(x, w)?;
    let pre = tape.add_bias(lin, b)?;
    let h = tape.relu(pre);
    let raw = tape.edge_dot(h, pattern)?;
    let scored = score_act.apply(tape, raw);
    EdgeVector::new(Arc::clone(pattern), scored)
}

/// Combines per-modality learned graphs on their union support:
/// `G = sigma_tilde(sum_i beta_i * G_i)`.
pub fn edgeconv_combine(
    tape: &mut Tape,
    graphs: &[EdgeVector],
    betas: Value,
    combine_act: Activation,
) -> Result<EdgeVector> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("no learned graphs to combine".into()));
    }
    let patterns: Vec<&SupportPattern> = graphs.iter().map(|g| g.pattern.as_ref()).collect();
    let union = Arc::new(crate::sparse::union_of_patterns(&patterns)?);
    let aligned: Vec<Value> = graphs
        .iter()
        .map(|g| {
            let scattered = tape.scatter_edges(g, &union, vec![0.0; union.nnz()])?;
            Ok(scattered.values)
        })
        .collect::<Result<Vec<_>>>()?;
    let pre = tape.mix(&aligned, betas)?;
    let out = combine_act.apply(tape, pre);
    EdgeVector::new(union, out)
}

// ---------------------------------------------------------------------------
// Multi-scale mixing
// ---------------------------------------------------------------------------

/// Trainable softmax weights over normalized adjacency powers.
#[derive(Debug, Clone)]
pub struct MultiScaleMixer {
    pub logits: Value,
}

impl MultiScaleMixer {
    /// Zero logits give a uniform initial weighting.
    pub fn init(tape: &mut Tape, hops: usize) -> Self {
        Self {
            logits: zeros_param(tape, hops, 1),
        }
    }

    pub fn hops(&self) -> usize {
        self.logits.rows()
    }

    pub fn weights(&self, tape: &mut Tape) -> Result<Value> {
        tape.softmax_vector(self.logits)
    }
}

pub const MAX_MULTISCALE_HOPS: usize = 8;

/// `sum_{i=1..hops} P_i * A^i * h` via repeated propagation, never forming
/// any matrix power explicitly. `weights` must already be the softmax of the
/// mixer logits.
pub fn multiscale_propagate(
    tape: &mut Tape,
    norm_adj: &Arc<CsrMatrix>,
    h0: Value,
    weights: Value,
    hops: usize,
) -> Result<Value> {
    if hops < 1 || hops > MAX_MULTISCALE_HOPS {
        return Err(Error::InvalidArgument(format!(
            "hop count {hops} outside 1..={MAX_MULTISCALE_HOPS}"
        )));
    }
    if weights.rows() * weights.cols() != hops {
        return Err(Error::DimensionMismatch(format!(
            "{hops} hops but {} mixing weights",
            weights.rows() * weights.cols()
        )));
    }
    let mut h = h0;
    let mut powers = Vec::with_capacity(hops);
    for _ in 0..hops {
        h = tape.spmm_const(norm_adj, h)?;
        powers.push(h);
    }
    tape.mix(&powers, weights)
}

/// Single-layer multi-scale forward pass `(sum_i P_i A^i) X W`.
pub fn multiscale_forward(
    tape: &mut Tape,
    norm_adj: &Arc<CsrMatrix>,
    x: Value,
    mixer: &MultiScaleMixer,
    w: Value,
    hops: usize,
) -> Result<Value> {
    let weights = mixer.weights(tape)?;
    let h0 = tape.matmul(x, w)?;
    multiscale_propagate(tape, norm_adj, h0, weights, hops)
}

// ---------------------------------------------------------------------------
// Linear attention variant
// ---------------------------------------------------------------------------

/// Hidden-layer-free pathfinder: per-edge weight is the attention-weighted
/// sum of that edge's features, with `attention = softmax(logits)` exported
/// for interpretability.
pub fn linear_pdn_attention(
    tape: &mut Tape,
    edge_features: Value,
    logits: Value,
    pattern: &Arc<SupportPattern>,
) -> Result<(EdgeVector, Value)> {
    if edge_features.cols() != logits.rows() * logits.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature columns vs {} attention logits",
            edge_features.cols(),
            logits.rows() * logits.cols()
        )));
    }
    let attention = tape.softmax_vector(logits)?;
    let weights = tape.matmul(edge_features, attention)?;
    let graph = EdgeVector::new(Arc::clone(pattern), weights)?;
    Ok((graph, attention))
}

// ---------------------------------------------------------------------------
// Degree-limit reference functions
// ---------------------------------------------------------------------------

/// Linear pathfinder edge weight: a pure function of the edge's own
/// features, independent of either endpoint's neighborhood size.
pub fn pdn_edge_weight_linear(features: &[f64], betas: &[f64]) -> f64 {
    assert_eq!(features.len(), betas.len(), "feature/beta length mismatch");
    features.iter().zip(betas).map(|(f, b)| f * b).sum()
}

/// Softmax-normalized neighbor weight, the demonstrator for the diminishing
/// attention weight as a neighborhood grows.
pub fn softmax_neighbor_weight(scores: &[f64], target: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty neighborhood".into()));
    }
    if target >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "neighbor index {target} out of range for {} scores",
            scores.len()
        )));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    Ok((scores[target] - max).exp() / sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::assert_grads_close;
    use crate::rng::seeded;

    fn random_graph(n: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = seeded(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen::<f64>() < density {
                    edges.push((u, v, 1.0));
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, 1, 1.0));
        }
        CsrMatrix::from_undirected_edges(n, &edges).unwrap()
    }

    fn random_weighted_graph(n: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = seeded(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen::<f64>() < density {
                    edges.push((u, v, rng.gen::<f64>() * 2.0 - 1.0));
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, 1, 0.5));
        }
        CsrMatrix::from_undirected_edges(n, &edges).unwrap()
    }

    fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = seeded(seed);
        DenseMatrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn neuron_identity_single_input_passes_graph_through() {
        let g = random_weighted_graph(5, 0.5, 1);
        let mut tape = Tape::new();
        let (_, inputs) = adjacency_edge_vectors(&mut tape, &[&g]).unwrap();
        let neuron = PathfinderNeuron {
            betas: tape.scalar(1.0),
            activation: Activation::Identity,
        };
        let out = pathfinder_neuron_forward(&mut tape, &inputs, &neuron).unwrap();
        assert_eq!(out.to_csr(&tape).unwrap(), g);
    }

    #[test]
    fn neuron_relu_cancellation_zeroes_everything() {
        let g = random_weighted_graph(5, 0.5, 2);
        let mut tape = Tape::new();
        let (_, inputs) = adjacency_edge_vectors(&mut tape, &[&g, &g]).unwrap();
        let betas = tape.leaf(DenseMatrix::new(2, 1, vec![1.0, -1.0]).unwrap());
        let neuron = PathfinderNeuron {
            betas,
            activation: Activation::Relu,
        };
        let out = pathfinder_neuron_forward(&mut tape, &inputs, &neuron).unwrap();
        assert!(tape.data(out.values).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn neuron_matches_masked_dense_oracle() {
        let a1 = random_weighted_graph(6, 0.4, 3);
        let a2 = random_weighted_graph(6, 0.4, 4);
        let mut tape = Tape::new();
        let (pattern, inputs) = adjacency_edge_vectors(&mut tape, &[&a1, &a2]).unwrap();
        let betas = tape.leaf(DenseMatrix::new(2, 1, vec![2.0, -1.0]).unwrap());
        let neuron = PathfinderNeuron {
            betas,
            activation: Activation::Sigmoid,
        };
        let out = pathfinder_neuron_forward(&mut tape, &inputs, &neuron).unwrap();
        let (d1, d2) = (a1.to_dense(), a2.to_dense());
        let values = tape.data(out.values).values();
        for (i, j, k) in pattern.entries() {
            let pre = 2.0 * d1.get(i, j) - d2.get(i, j);
            let expect = 1.0 / (1.0 + (-pre).exp());
            assert!((values[k] - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn layer_with_one_neuron_equals_neuron_forward() {
        let g = random_weighted_graph(5, 0.5, 5);
        let mut tape = Tape::new();
        let (_, inputs) = adjacency_edge_vectors(&mut tape, &[&g]).unwrap();
        let neuron = PathfinderNeuron {
            betas: tape.scalar(0.7),
            activation: Activation::Relu,
        };
        let from_layer = pathfinder_layer_forward(&mut tape, &inputs, &[neuron.clone()]).unwrap();
        let direct = pathfinder_neuron_forward(&mut tape, &inputs, &neuron).unwrap();
        assert_eq!(from_layer.len(), 1);
        assert_eq!(
            tape.data(from_layer[0].values).values(),
            tape.data(direct.values).values()
        );
    }

    #[test]
    fn layer_identical_betas_identical_outputs() {
        let g1 = random_weighted_graph(5, 0.4, 6);
        let g2 = random_weighted_graph(5, 0.4, 7);
        let mut tape = Tape::new();
        let (_, inputs) = adjacency_edge_vectors(&mut tape, &[&g1, &g2]).unwrap();
        let betas = DenseMatrix::new(2, 1, vec![0.3, -0.9]).unwrap();
        let n1 = PathfinderNeuron {
            betas: tape.leaf(betas.clone()),
            activation: Activation::Sigmoid,
        };
        let n2 = PathfinderNeuron {
            betas: tape.leaf(betas),
            activation: Activation::Sigmoid,
        };
        let outs = pathfinder_layer_forward(&mut tape, &inputs, &[n1, n2]).unwrap();
        assert_eq!(
            tape.data(outs[0].values).values(),
            tape.data(outs[1].values).values()
        );
    }

    #[test]
    fn layer_rejects_empty_neuron_list() {
        let g = random_weighted_graph(4, 0.5, 8);
        let mut tape = Tape::new();
        let (_, inputs) = adjacency_edge_vectors(&mut tape, &[&g]).unwrap();
        assert!(pathfinder_layer_forward(&mut tape, &inputs, &[]).is_err());
    }

    #[test]
    fn stacked_layers_match_hand_composed_formula() {
        // two neurons with sigmoid, then one combining neuron with relu,
        // composed by hand per edge on a 4-node graph
        let a1 = random_weighted_graph(4, 0.6, 9);
        let a2 = random_weighted_graph(4, 0.6, 10);
        let mut tape = Tape::new();
        let (pattern, inputs) = adjacency_edge_vectors(&mut tape, &[&a1, &a2]).unwrap();
        let b1 = [0.8, -0.4];
        let b2 = [-0.2, 1.1];
        let c = [1.5, -0.6];
        let l1n1 = PathfinderNeuron {
            betas: tape.leaf(DenseMatrix::new(2, 1, b1.to_vec()).unwrap()),
            activation: Activation::Sigmoid,
        };
        let l1n2 = PathfinderNeuron {
            betas: tape.leaf(DenseMatrix::new(2, 1, b2.to_vec()).unwrap()),
            activation: Activation::Sigmoid,
        };
        let l2 = PathfinderNeuron {
            betas: tape.leaf(DenseMatrix::new(2, 1, c.to_vec()).unwrap()),
            activation: Activation::Relu,
        };
        let layer1 = pathfinder_layer_forward(&mut tape, &inputs, &[l1n1, l1n2]).unwrap();
        let out = pathfinder_neuron_forward(&mut tape, &layer1, &l2).unwrap();

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (d1, d2) = (a1.to_dense(), a2.to_dense());
        let values = tape.data(out.values).values();
        for (i, j, k) in pattern.entries() {
            let h1 = sig(b1[0] * d1.get(i, j) + b1[1] * d2.get(i, j));
            let h2 = sig(b2[0] * d1.get(i, j) + b2[1] * d2.get(i, j));
            let expect = (c[0] * h1 + c[1] * h2).max(0.0);
            assert!((values[k] - expect).abs() <= 1e-14);
        }
    }

    #[test]
    fn mlp_zero_parameters_sigmoid_gives_half() {
        let g = random_graph(5, 0.5, 11);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let mlp = PathfinderMlp {
            layers: vec![
                (zeros_param(&mut tape, 3, 4), zeros_param(&mut tape, 1, 4)),
                (zeros_param(&mut tape, 4, 1), zeros_param(&mut tape, 1, 1)),
            ],
            out_act: Activation::Sigmoid,
        };
        let features = tape.leaf(random_dense(pattern.nnz(), 3, 12));
        let out = pathfinder_mlp_forward(&mut tape, features, &mlp, &pattern).unwrap();
        assert!(tape
            .data(out.values)
            .values()
            .iter()
            .all(|&v| v == 0.5));
    }

    #[test]
    fn mlp_matches_per_edge_scalar_oracle() {
        let g = random_graph(6, 0.4, 13);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let mut rng = seeded(14);
        let mlp = PathfinderMlp::init(&mut tape, 4, &[5], Activation::Sigmoid, &mut rng);
        let features = random_dense(pattern.nnz(), 4, 15);
        let fv = tape.leaf(features.clone());
        let out = pathfinder_mlp_forward(&mut tape, fv, &mlp, &pattern).unwrap();

        let (w1, b1) = (tape.data(mlp.layers[0].0).clone(), tape.data(mlp.layers[0].1).clone());
        let (w2, b2) = (tape.data(mlp.layers[1].0).clone(), tape.data(mlp.layers[1].1).clone());
        for k in 0..pattern.nnz() {
            let f = features.row(k);
            let mut hidden = vec![0.0; 5];
            for (h_idx, h) in hidden.iter_mut().enumerate() {
                let mut acc = b1.get(0, h_idx);
                for (c, fv) in f.iter().enumerate() {
                    acc += fv * w1.get(c, h_idx);
                }
                *h = acc.max(0.0);
            }
            let mut pre = b2.get(0, 0);
            for (h_idx, h) in hidden.iter().enumerate() {
                pre += h * w2.get(h_idx, 0);
            }
            let expect = 1.0 / (1.0 + (-pre).exp());
            assert!((tape.data(out.values).values()[k] - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn xor_reference_table_matches_exactly() {
        let table = xor_reference_table();
        assert_eq!(table[0], (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(table[1], (0.0, 1.0, 1.0, 0.0, 1.0));
        assert_eq!(table[2], (1.0, 0.0, 1.0, 0.0, 1.0));
        assert_eq!(table[3], (1.0, 1.0, 2.0, 1.0, 0.0));
    }

    #[test]
    fn xor_reference_through_mlp_forward_is_bitwise() {
        // four synthetic "edges" carrying the four binary feature pairs
        let g = random_graph(4, 0.99, 16);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let mlp = xor_reference_weights(&mut tape);
        let mut feats = Vec::new();
        for k in 0..pattern.nnz() {
            let pair = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)][k % 4];
            feats.push(pair.0);
            feats.push(pair.1);
        }
        let fv = tape.leaf(DenseMatrix::new(pattern.nnz(), 2, feats.clone()).unwrap());
        let out = pathfinder_mlp_forward(&mut tape, fv, &mlp, &pattern).unwrap();
        for k in 0..pattern.nnz() {
            let expect = if feats[2 * k] != feats[2 * k + 1] { 1.0 } else { 0.0 };
            assert_eq!(tape.data(out.values).values()[k], expect);
        }
    }

    #[test]
    fn gcn_zero_first_weight_gives_zero_logits() {
        let g = random_graph(5, 0.5, 17);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let mut rng = seeded(18);
        let mut head = GcnHead::init(&mut tape, 4, 8, 3, 0.0, &mut rng);
        head.w1 = zeros_param(&mut tape, 4, 8);
        let edges = EdgeVector::from_csr(&mut tape, &pattern, &g).unwrap();
        let x = tape.leaf(random_dense(5, 4, 19));
        let z = gcn_forward(&mut tape, &edges, x, &head, false, true, &mut rng).unwrap();
        assert!(tape.data(z).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_on_isolated_self_loops_reduces_to_mlp() {
        let n = 5;
        let id = CsrMatrix::empty(n, n);
        let pattern = Arc::new(SupportPattern::from_csr(&id));
        let mut tape = Tape::new();
        let mut rng = seeded(20);
        let head = GcnHead::init(&mut tape, 4, 8, 3, 0.0, &mut rng);
        let edges = EdgeVector::from_csr(&mut tape, &pattern, &id).unwrap();
        let x0 = random_dense(n, 4, 21);
        let x = tape.leaf(x0.clone());
        let z = gcn_forward(&mut tape, &edges, x, &head, false, true, &mut rng).unwrap();

        let w1 = tape.data(head.w1).clone();
        let w2 = tape.data(head.w2).clone();
        let mut hidden = x0.matmul(&w1).unwrap();
        for v in hidden.values_mut() {
            *v = v.max(0.0);
        }
        let expect = hidden.matmul(&w2).unwrap();
        for (a, b) in tape.data(z).values().iter().zip(expect.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gcn_matches_dense_two_hop_oracle() {
        let g = random_graph(6, 0.5, 22);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let mut rng = seeded(23);
        let head = GcnHead::init(&mut tape, 4, 8, 3, 0.5, &mut rng);
        // positive learned weights on the graph support
        let weights: Vec<f64> = (0..pattern.nnz()).map(|k| 0.2 + 0.1 * k as f64).collect();
        // symmetrize so (i,j) and (j,i) agree
        let mut sym = weights;
        for (i, j, k) in pattern.entries() {
            if i < j {
                let kji = pattern.position_of(j, i).unwrap();
                sym[kji] = sym[k];
            }
        }
        let wleaf = tape.leaf(DenseMatrix::new(pattern.nnz(), 1, sym.clone()).unwrap());
        let edges = EdgeVector::new(Arc::clone(&pattern), wleaf).unwrap();
        let x0 = random_dense(6, 4, 24);
        let x = tape.leaf(x0.clone());
        let z = gcn_forward(&mut tape, &edges, x, &head, false, true, &mut rng).unwrap();

        // independently coded dense oracle
        let mut dense = pattern.with_values(sym).unwrap().to_dense();
        for i in 0..6 {
            dense.set(i, i, dense.get(i, i) + 1.0);
        }
        let deg: Vec<f64> = (0..6).map(|i| dense.row(i).iter().sum::<f64>()).collect();
        let mut norm = DenseMatrix::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                if dense.get(i, j) != 0.0 {
                    norm.set(i, j, dense.get(i, j) / (deg[i] * deg[j]).sqrt());
                }
            }
        }
        let w1 = tape.data(head.w1).clone();
        let w2 = tape.data(head.w2).clone();
        let mut h = norm.matmul(&x0.matmul(&w1).unwrap()).unwrap();
        for v in h.values_mut() {
            *v = v.max(0.0);
        }
        let expect = norm.matmul(&h.matmul(&w2).unwrap()).unwrap();
        for (a, b) in tape.data(z).values().iter().zip(expect.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gcn_rejects_negative_learned_weights() {
        let g = random_graph(4, 0.6, 25);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let mut rng = seeded(26);
        let head = GcnHead::init(&mut tape, 3, 4, 2, 0.0, &mut rng);
        let w = tape.leaf(DenseMatrix::new(pattern.nnz(), 1, vec![-0.5; pattern.nnz()]).unwrap());
        let edges = EdgeVector::new(Arc::clone(&pattern), w).unwrap();
        let x = tape.leaf(random_dense(4, 3, 27));
        assert!(matches!(
            gcn_forward(&mut tape, &edges, x, &head, false, false, &mut rng),
            Err(Error::NegativeEntry { .. })
        ));
    }

    #[test]
    fn edgeconv_zero_features_sigmoid_scores_half() {
        let g = random_graph(5, 0.5, 28);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let x = tape.leaf(DenseMatrix::zeros(5, 3));
        let w = tape.leaf(random_dense(3, 4, 29));
        let b = zeros_param(&mut tape, 1, 4);
        let out =
            edgeconv_scores(&mut tape, &g, &pattern, x, w, b, Activation::Sigmoid).unwrap();
        assert!(tape.data(out.values).values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn edgeconv_identical_embeddings_score_squared_norm() {
        let g = random_graph(4, 0.9, 30);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        // identical rows and an identity map keep H rows equal to x rows
        let row = [0.5, -1.0, 2.0];
        let x = tape.leaf(
            DenseMatrix::new(4, 3, row.iter().cycle().take(12).cloned().collect()).unwrap(),
        );
        let w = tape.leaf(
            DenseMatrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let b = zeros_param(&mut tape, 1, 3);
        let out =
            edgeconv_scores(&mut tape, &g, &pattern, x, w, b, Activation::Identity).unwrap();
        // relu keeps positive coordinates only
        let h: Vec<f64> = row.iter().map(|v| v.max(0.0)).collect();
        let expect: f64 = h.iter().map(|v| v * v).sum();
        for &v in tape.data(out.values).values() {
            assert!((v - expect).abs() <= 1e-14);
        }
    }

    #[test]
    fn edgeconv_matches_dense_hadamard_oracle() {
        let g = random_graph(8, 0.4, 31);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let mut rng = seeded(32);
        let x0 = random_dense(8, 5, 33);
        let x = tape.leaf(x0.clone());
        let w = glorot_uniform(&mut tape, 5, 4, &mut rng);
        let b = tape.leaf(random_dense(1, 4, 34));
        let out =
            edgeconv_scores(&mut tape, &g, &pattern, x, w, b, Activation::Sigmoid).unwrap();

        let mut h = x0.matmul(tape.data(w)).unwrap();
        for i in 0..h.n_rows() {
            for j in 0..h.n_cols() {
                let v = h.get(i, j) + tape.data(b).get(0, j);
                h.set(i, j, v.max(0.0));
            }
        }
        let gram = h.matmul(&h.transpose()).unwrap();
        let adense = g.to_dense();
        for (u, v, k) in pattern.entries() {
            assert!(adense.get(u, v) == 1.0);
            let expect = 1.0 / (1.0 + (-gram.get(u, v)).exp());
            assert!((tape.data(out.values).values()[k] - expect).abs() <= 1e-14);
        }
    }

    #[test]
    fn edgeconv_rejects_non_binary_adjacency() {
        let g = CsrMatrix::from_undirected_edges(3, &[(0, 1, 2.0)]).unwrap();
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let x = tape.leaf(DenseMatrix::zeros(3, 2));
        let w = zeros_param(&mut tape, 2, 2);
        let b = zeros_param(&mut tape, 1, 2);
        assert!(matches!(
            edgeconv_scores(&mut tape, &g, &pattern, x, w, b, Activation::Sigmoid),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn edgeconv_combine_identity_single_graph() {
        let g = random_weighted_graph(5, 0.5, 35);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let ev = EdgeVector::from_csr(&mut tape, &pattern, &g).unwrap();
        let beta = tape.scalar(1.0);
        let out = edgeconv_combine(&mut tape, &[ev], beta, Activation::Identity).unwrap();
        assert_eq!(out.to_csr(&tape).unwrap().values(), g.values());
    }

    #[test]
    fn edgeconv_combine_zero_betas_sigmoid_on_union() {
        let g1 = random_graph(5, 0.4, 36);
        let g2 = random_graph(5, 0.4, 37);
        let mut tape = Tape::new();
        let p1 = Arc::new(SupportPattern::from_csr(&g1));
        let p2 = Arc::new(SupportPattern::from_csr(&g2));
        let e1 = EdgeVector::from_csr(&mut tape, &p1, &g1).unwrap();
        let e2 = EdgeVector::from_csr(&mut tape, &p2, &g2).unwrap();
        let betas = zeros_param(&mut tape, 2, 1);
        let out = edgeconv_combine(&mut tape, &[e1, e2], betas, Activation::Sigmoid).unwrap();
        let union = support_union(&[&g1, &g2]).unwrap();
        assert_eq!(out.pattern.nnz(), union.nnz());
        assert!(tape.data(out.values).values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn edgeconv_combine_matches_dense_oracle() {
        let g1 = random_weighted_graph(6, 0.4, 38);
        let g2 = random_weighted_graph(6, 0.4, 39);
        let mut tape = Tape::new();
        let p1 = Arc::new(SupportPattern::from_csr(&g1));
        let p2 = Arc::new(SupportPattern::from_csr(&g2));
        let e1 = EdgeVector::from_csr(&mut tape, &p1, &g1).unwrap();
        let e2 = EdgeVector::from_csr(&mut tape, &p2, &g2).unwrap();
        let betas = tape.leaf(DenseMatrix::new(2, 1, vec![0.9, -1.4]).unwrap());
        let out = edgeconv_combine(&mut tape, &[e1, e2], betas, Activation::Relu).unwrap();
        let (d1, d2) = (g1.to_dense(), g2.to_dense());
        let values = tape.data(out.values).values();
        for (i, j, k) in out.pattern.entries() {
            let expect = (0.9 * d1.get(i, j) - 1.4 * d2.get(i, j)).max(0.0);
            assert!((values[k] - expect).abs() <= 1e-14);
        }
    }

    #[test]
    fn multiscale_single_hop_is_plain_propagation() {
        let g = random_graph(6, 0.5, 40);
        let norm = Arc::new(g.add_self_loops(1.0).unwrap().sym_normalize(DEGREE_EPS).unwrap());
        let mut tape = Tape::new();
        let mixer = MultiScaleMixer::init(&mut tape, 1);
        let x0 = random_dense(6, 3, 41);
        let x = tape.leaf(x0.clone());
        let mut rng = seeded(42);
        let w = glorot_uniform(&mut tape, 3, 2, &mut rng);
        let out = multiscale_forward(&mut tape, &norm, x, &mixer, w, 1).unwrap();
        let expect = norm.spmm(&x0.matmul(tape.data(w)).unwrap()).unwrap();
        assert_eq!(tape.data(out).values(), expect.values());
    }

    #[test]
    fn multiscale_identity_adjacency_gives_xw() {
        let norm = Arc::new(CsrMatrix::identity(5));
        let mut tape = Tape::new();
        let logits = tape.leaf(random_dense(3, 1, 43));
        let mixer = MultiScaleMixer { logits };
        let x0 = random_dense(5, 4, 44);
        let x = tape.leaf(x0.clone());
        let mut rng = seeded(45);
        let w = glorot_uniform(&mut tape, 4, 2, &mut rng);
        let out = multiscale_forward(&mut tape, &norm, x, &mixer, w, 3).unwrap();
        let expect = x0.matmul(tape.data(w)).unwrap();
        for (a, b) in tape.data(out).values().iter().zip(expect.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn multiscale_matches_explicit_power_oracle() {
        let g = random_graph(20, 0.2, 46);
        let norm = Arc::new(g.add_self_loops(1.0).unwrap().sym_normalize(DEGREE_EPS).unwrap());
        let mut tape = Tape::new();
        let logits = tape.leaf(random_dense(3, 1, 47));
        let mixer = MultiScaleMixer { logits };
        let x0 = random_dense(20, 5, 48);
        let x = tape.leaf(x0.clone());
        let mut rng = seeded(49);
        let w = glorot_uniform(&mut tape, 5, 3, &mut rng);
        let out = multiscale_forward(&mut tape, &norm, x, &mixer, w, 3).unwrap();

        // explicit dense powers
        let weights = mixer.weights(&mut tape).unwrap();
        let p = tape.data(weights).values().to_vec();
        let nd = norm.to_dense();
        let xw = x0.matmul(tape.data(w)).unwrap();
        let a1 = nd.matmul(&xw).unwrap();
        let a2 = nd.matmul(&a1).unwrap();
        let a3 = nd.matmul(&a2).unwrap();
        for (idx, o) in tape.data(out).values().iter().enumerate() {
            let expect = p[0] * a1.values()[idx] + p[1] * a2.values()[idx] + p[2] * a3.values()[idx];
            assert!((o - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn multiscale_mixer_weights_positive_and_normalized() {
        let mut tape = Tape::new();
        let logits = tape.leaf(random_dense(5, 1, 50));
        let mixer = MultiScaleMixer { logits };
        let w = mixer.weights(&mut tape).unwrap();
        let vals = tape.data(w).values();
        assert!(vals.iter().all(|&v| v > 0.0));
        assert!((vals.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn multiscale_rejects_zero_hops() {
        let norm = Arc::new(CsrMatrix::identity(3));
        let mut tape = Tape::new();
        let mixer = MultiScaleMixer::init(&mut tape, 1);
        let x = tape.leaf(random_dense(3, 2, 51));
        let w = zeros_param(&mut tape, 2, 2);
        assert!(multiscale_forward(&mut tape, &norm, x, &mixer, w, 0).is_err());
    }

    #[test]
    fn linear_attention_singleton_passes_feature_through() {
        let g = random_graph(4, 0.6, 52);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let feats = random_dense(pattern.nnz(), 1, 53);
        let fv = tape.leaf(feats.clone());
        let logits = tape.scalar(0.3);
        let (graph, attention) =
            linear_pdn_attention(&mut tape, fv, logits, &pattern).unwrap();
        assert_eq!(tape.data(attention).values(), &[1.0]);
        assert_eq!(tape.data(graph.values).values(), feats.values());
    }

    #[test]
    fn linear_attention_equal_logits_averages_features() {
        let g = random_graph(4, 0.6, 54);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let feats = random_dense(pattern.nnz(), 3, 55);
        let fv = tape.leaf(feats.clone());
        let logits = zeros_param(&mut tape, 3, 1);
        let (graph, _) = linear_pdn_attention(&mut tape, fv, logits, &pattern).unwrap();
        for k in 0..pattern.nnz() {
            let mean = feats.row(k).iter().sum::<f64>() / 3.0;
            assert!((tape.data(graph.values).values()[k] - mean).abs() <= 1e-15);
        }
    }

    #[test]
    fn linear_attention_matches_direct_formula() {
        let g = random_graph(5, 0.5, 56);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let mut tape = Tape::new();
        let feats = random_dense(pattern.nnz(), 4, 57);
        let fv = tape.leaf(feats.clone());
        let logits0 = random_dense(4, 1, 58);
        let logits = tape.leaf(logits0.clone());
        let (graph, attention) =
            linear_pdn_attention(&mut tape, fv, logits, &pattern).unwrap();
        // direct formula
        let max = logits0.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits0.values().iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let att: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        for (a, b) in tape.data(attention).values().iter().zip(&att) {
            assert!((a - b).abs() <= 1e-15);
        }
        for k in 0..pattern.nnz() {
            let expect: f64 = feats.row(k).iter().zip(&att).map(|(f, a)| f * a).sum();
            assert!((tape.data(graph.values).values()[k] - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn linear_edge_weight_is_plain_dot_product() {
        assert_eq!(pdn_edge_weight_linear(&[1.0, 0.0], &[1.0, 1.0]), 1.0);
        assert_eq!(pdn_edge_weight_linear(&[3.0, -2.0], &[0.0, 0.0]), 0.0);
        assert!((pdn_edge_weight_linear(&[2.0, 1.0], &[0.3, -0.7]) - (-0.1)).abs() <= 1e-15);
    }

    #[test]
    fn softmax_neighbor_weight_basics() {
        assert_eq!(softmax_neighbor_weight(&[2.5], 0).unwrap(), 1.0);
        for k in [2usize, 5, 10, 100] {
            let scores = vec![0.7; k];
            let w = softmax_neighbor_weight(&scores, 0).unwrap();
            assert_eq!(w, 1.0 / k as f64);
        }
        assert!(softmax_neighbor_weight(&[], 0).is_err());
    }

    #[test]
    fn softmax_neighbor_weight_bounded_scores_vanish() {
        // scores bounded in [-c, c] force the weight under e^{2c}/k
        let c = 1.0;
        let mut rng = seeded(59);
        for k in [10usize, 100, 1000] {
            let scores: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 2.0 * c - c).collect();
            let w = softmax_neighbor_weight(&scores, 0).unwrap();
            assert!(w <= (2.0 * c).exp() / k as f64 + 1e-15, "k={k} w={w}");
        }
    }

    #[test]
    fn softmax_neighbor_weight_decreases_as_neighborhood_grows() {
        let mut scores = vec![0.3, -0.2, 0.8];
        let before = softmax_neighbor_weight(&scores, 0).unwrap();
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        scores.push(min + 0.1);
        let after = softmax_neighbor_weight(&scores, 0).unwrap();
        assert!(after < before);
    }

    #[test]
    fn learned_graph_support_stays_inside_union() {
        let a1 = random_weighted_graph(6, 0.3, 60);
        let a2 = random_weighted_graph(6, 0.3, 61);
        let union = support_union(&[&a1, &a2]).unwrap();
        let mut tape = Tape::new();
        let (pattern, inputs) = adjacency_edge_vectors(&mut tape, &[&a1, &a2]).unwrap();
        let mut rng = seeded(62);
        let neuron = PathfinderNeuron::init(&mut tape, 2, Activation::Sigmoid, &mut rng);
        let out = pathfinder_neuron_forward(&mut tape, &inputs, &neuron).unwrap();
        let dense = out.to_csr(&tape).unwrap().to_dense();
        for i in 0..6 {
            for j in 0..6 {
                if union.position_of(i, j).is_none() {
                    assert_eq!(dense.get(i, j), 0.0);
                }
            }
        }
        assert_eq!(pattern.nnz(), union.nnz());
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        // pathfinder mlp -> self loops -> normalize -> two-hop gcn -> loss
        let g = random_graph(6, 0.5, 63);
        let pattern = Arc::new(SupportPattern::from_csr(&g));
        let nnz = pattern.nnz();
        let feats = random_dense(nnz, 3, 64);
        let x0 = random_dense(6, 4, 65);
        let labels = Arc::new(vec![0usize, 1, 2, 0, 1, 2]);
        let mask = Arc::new(vec![0usize, 2, 3, 5]);

        let mut rng = seeded(66);
        let mut init_tape = Tape::new();
        let mlp0 = PathfinderMlp::init(&mut init_tape, 3, &[4], Activation::Sigmoid, &mut rng);
        let head0 = GcnHead::init(&mut init_tape, 4, 5, 3, 0.0, &mut rng);
        let initial: Vec<DenseMatrix> = mlp0
            .params()
            .into_iter()
            .chain(head0.params())
            .map(|p| init_tape.data(p).clone())
            .collect();

        let p = Arc::clone(&pattern);
        let (f, x, l, m) = (feats, x0, labels, mask);
        assert_grads_close(&initial, 1e-5, &|tape, leaves| {
            let mlp = PathfinderMlp {
                layers: vec![(leaves[0], leaves[1]), (leaves[2], leaves[3])],
                out_act: Activation::Sigmoid,
            };
            let head = GcnHead {
                w1: leaves[4],
                w2: leaves[5],
                dropout: 0.0,
            };
            let fv = tape.leaf(f.clone());
            let xv = tape.leaf(x.clone());
            let graph = pathfinder_mlp_forward(tape, fv, &mlp, &p)?;
            let mut rng = seeded(1);
            let logits = gcn_forward(tape, &graph, xv, &head, false, true, &mut rng)?;
            let ce = tape.softmax_cross_entropy(logits, &l, &m)?;
            let pen = tape.l2_penalty(&[leaves[0], leaves[2], leaves[4], leaves[5]], 1e-3)?;
            tape.add(ce, pen)
        });
    }
}
