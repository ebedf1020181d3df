//! The jointly trained model: a pathfinder module choice plus the spectral
//! GCN head, with parameter registration for the optimizer and checkpoints.

use crate::autodiff::{EdgeVector, Tape, Value};
use crate::dataset::GraphTask;
use crate::error::{Error, Result};
use crate::layers::{
    edgeconv_combine, edgeconv_scores, gcn_forward, glorot_uniform, linear_pdn_attention,
    multiscale_propagate, normalized_propagation, pathfinder_mlp_forward, zeros_param,
    Activation, GcnHead, MultiScaleMixer, PathfinderMlp,
};
use crate::rng::Rng;
use crate::sparse::{CooMatrix, CsrMatrix, SupportPattern, DEGREE_EPS};
use std::sync::Arc;

/// Default hidden width of the GCN head.
pub const HEAD_HIDDEN: usize = 32;
/// Default pathfinder hidden layer.
pub const PDN_HIDDEN: usize = 16;
/// Default embedding width per edge-convolution modality.
pub const EDGECONV_EMBED: usize = 16;
/// Default proximity order for the multi-scale classifier.
pub const MULTISCALE_HOPS: usize = 2;

/// Model variants exposed by the experiment runner.
#[derive(Debug, Clone, PartialEq)]
pub enum PdnVariant {
    /// GCN over the input graph with fixed (non-learned) edge weights; the
    /// internal ablation baseline.
    FixedGcn,
    /// Deep per-edge MLP over edge features.
    DeepEdgeMlp {
        hidden: Vec<usize>,
        out_act: Activation,
    },
    /// Hidden-layer-free softmax attention over edge features.
    LinearAttention,
    /// Learned per-modality similarities from node features on the 1- and
    /// 2-hop adjacencies.
    EdgeConv { embed_dim: usize },
    /// Softmax-mixed normalized adjacency powers as the propagation matrix.
    MultiScale { hops: usize },
}

impl PdnVariant {
    pub fn default_pdn() -> Self {
        PdnVariant::DeepEdgeMlp {
            hidden: vec![PDN_HIDDEN],
            out_act: Activation::Sigmoid,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gcn" => Ok(PdnVariant::FixedGcn),
            "pdn" => Ok(PdnVariant::default_pdn()),
            "pdn_linear" => Ok(PdnVariant::LinearAttention),
            "pdn_edgeconv" => Ok(PdnVariant::EdgeConv {
                embed_dim: EDGECONV_EMBED,
            }),
            "pdn_multiscale" => Ok(PdnVariant::MultiScale {
                hops: MULTISCALE_HOPS,
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown model '{other}' (expected gcn, pdn, pdn_linear, pdn_edgeconv or pdn_multiscale)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PdnVariant::FixedGcn => "gcn",
            PdnVariant::DeepEdgeMlp { .. } => "pdn",
            PdnVariant::LinearAttention => "pdn_linear",
            PdnVariant::EdgeConv { .. } => "pdn_edgeconv",
            PdnVariant::MultiScale { .. } => "pdn_multiscale",
        }
    }

    /// Column labels for the attention trace this variant exports, if any.
    pub fn attention_labels(&self, task_edge_dim: usize) -> Option<Vec<String>> {
        match self {
            PdnVariant::LinearAttention => Some(
                (0..task_edge_dim).map(|i| format!("attention_{i}")).collect(),
            ),
            PdnVariant::MultiScale { hops } => {
                Some((1..=*hops).map(|i| format!("p{i}")).collect())
            }
            _ => None,
        }
    }
}

/// Binary adjacency of the exact 2-hop proximity (paths of length two,
/// self excluded).
pub fn two_hop_binary(graph: &CsrMatrix) -> Result<CsrMatrix> {
    let n = graph.n_rows();
    let mut entries = Vec::new();
    let mut seen = vec![false; n];
    let mut touched = Vec::new();
    for u in 0..n {
        touched.clear();
        for &v in graph.row(u).0 {
            for &w in graph.row(v).0 {
                if w != u && !seen[w] {
                    seen[w] = true;
                    touched.push(w);
                }
            }
        }
        touched.sort_unstable();
        for &w in &touched {
            entries.push((u, w, 1.0));
            seen[w] = false;
        }
    }
    CooMatrix::new(n, n, entries).to_csr()
}

struct EdgeConvParams {
    /// one (W', b) per modality
    maps: Vec<(Value, Value)>,
    betas: Value,
    score_act: Activation,
    combine_act: Activation,
}

struct Modality {
    adj: Arc<CsrMatrix>,
    pattern: Arc<SupportPattern>,
}

pub struct ForwardOutput {
    pub logits: Value,
    /// softmax attention (linear variant) or hop weights (multi-scale)
    pub attention: Option<Value>,
}

/// A pathfinder module plus GCN head bound to one task's constants. The
/// parameters are tape leaves created at construction; the forward pass can
/// be replayed every epoch after truncating the tape back to its post-init
/// mark.
pub struct PdnModel {
    pub variant: PdnVariant,
    pub head: GcnHead,
    pub self_loops: bool,
    mlp: Option<PathfinderMlp>,
    attn_logits: Option<Value>,
    edgeconv: Option<EdgeConvParams>,
    mixer: Option<MultiScaleMixer>,
    // task constants, created on the tape before the training mark
    x: Value,
    pattern: Arc<SupportPattern>,
    edge_feats: Option<Value>,
    unit_edges: Option<EdgeVector>,
    modalities: Vec<Modality>,
    norm_adj: Option<Arc<CsrMatrix>>,
}

impl PdnModel {
    pub fn init(
        tape: &mut Tape,
        variant: PdnVariant,
        task: &GraphTask,
        dropout: f64,
        self_loops: bool,
        rng: &mut Rng,
    ) -> Result<PdnModel> {
        let head = GcnHead::init(
            tape,
            task.node_dim(),
            HEAD_HIDDEN,
            task.n_classes,
            dropout,
            rng,
        );
        let x = tape.leaf(task.node_features.clone());
        let pattern = Arc::clone(&task.pattern);

        let mut model = PdnModel {
            variant: variant.clone(),
            head,
            self_loops,
            mlp: None,
            attn_logits: None,
            edgeconv: None,
            mixer: None,
            x,
            pattern,
            edge_feats: None,
            unit_edges: None,
            modalities: Vec::new(),
            norm_adj: None,
        };
        match variant {
            PdnVariant::FixedGcn => {
                model.unit_edges =
                    Some(EdgeVector::from_csr(tape, &model.pattern, &task.graph)?);
            }
            PdnVariant::DeepEdgeMlp { hidden, out_act } => {
                model.edge_feats = Some(tape.leaf(task.edge_features.clone()));
                model.mlp = Some(PathfinderMlp::init(
                    tape,
                    task.edge_dim(),
                    &hidden,
                    out_act,
                    rng,
                ));
            }
            PdnVariant::LinearAttention => {
                model.edge_feats = Some(tape.leaf(task.edge_features.clone()));
                model.attn_logits = Some(zeros_param(tape, task.edge_dim(), 1));
            }
            PdnVariant::EdgeConv { embed_dim } => {
                let one_hop = Arc::clone(&task.graph);
                let two_hop = Arc::new(two_hop_binary(&task.graph)?);
                for adj in [one_hop, two_hop] {
                    let pattern = Arc::new(SupportPattern::from_csr(&adj));
                    model.modalities.push(Modality { adj, pattern });
                }
                let maps = (0..model.modalities.len())
                    .map(|_| {
                        let w = glorot_uniform(tape, task.node_dim(), embed_dim, rng);
                        let b = zeros_param(tape, 1, embed_dim);
                        (w, b)
                    })
                    .collect();
                let betas = glorot_uniform(tape, model.modalities.len(), 1, rng);
                model.edgeconv = Some(EdgeConvParams {
                    maps,
                    betas,
                    score_act: Activation::Sigmoid,
                    combine_act: Activation::Relu,
                });
            }
            PdnVariant::MultiScale { hops } => {
                let norm = task
                    .graph
                    .add_self_loops(1.0)?
                    .sym_normalize(DEGREE_EPS)?;
                model.norm_adj = Some(Arc::new(norm));
                model.mixer = Some(MultiScaleMixer::init(tape, hops));
            }
        }
        Ok(model)
    }

    /// Trainable parameters in registration order.
    pub fn params(&self) -> Vec<Value> {
        let mut out = self.head.params();
        if let Some(mlp) = &self.mlp {
            out.extend(mlp.params());
        }
        if let Some(logits) = self.attn_logits {
            out.push(logits);
        }
        if let Some(ec) = &self.edgeconv {
            for (w, b) in &ec.maps {
                out.push(*w);
                out.push(*b);
            }
            out.push(ec.betas);
        }
        if let Some(mixer) = &self.mixer {
            out.push(mixer.logits);
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["head.w1".to_string(), "head.w2".to_string()];
        if let Some(mlp) = &self.mlp {
            for i in 0..mlp.layers.len() {
                out.push(format!("pathfinder.{i}.w"));
                out.push(format!("pathfinder.{i}.b"));
            }
        }
        if self.attn_logits.is_some() {
            out.push("attention.logits".to_string());
        }
        if let Some(ec) = &self.edgeconv {
            for i in 0..ec.maps.len() {
                out.push(format!("edgeconv.{i}.w"));
                out.push(format!("edgeconv.{i}.b"));
            }
            out.push("edgeconv.betas".to_string());
        }
        if self.mixer.is_some() {
            out.push("mixer.logits".to_string());
        }
        out
    }

    /// One forward pass to raw logits. Records onto the tape; callers
    /// truncate back to their mark between epochs.
    pub fn forward(&self, tape: &mut Tape, train: bool, rng: &mut Rng) -> Result<ForwardOutput> {
        match &self.variant {
            PdnVariant::FixedGcn => {
                let graph = self.unit_edges.as_ref().expect("prepared");
                let logits =
                    gcn_forward(tape, graph, self.x, &self.head, train, self.self_loops, rng)?;
                Ok(ForwardOutput {
                    logits,
                    attention: None,
                })
            }
            PdnVariant::DeepEdgeMlp { .. } => {
                let feats = self.edge_feats.expect("prepared");
                let mlp = self.mlp.as_ref().expect("prepared");
                let graph = pathfinder_mlp_forward(tape, feats, mlp, &self.pattern)?;
                let logits =
                    gcn_forward(tape, &graph, self.x, &self.head, train, self.self_loops, rng)?;
                Ok(ForwardOutput {
                    logits,
                    attention: None,
                })
            }
            PdnVariant::LinearAttention => {
                let feats = self.edge_feats.expect("prepared");
                let logits_param = self.attn_logits.expect("prepared");
                let (graph, attention) =
                    linear_pdn_attention(tape, feats, logits_param, &self.pattern)?;
                // the attention output is a convex combination of the edge
                // features; the masked relu only matters when features can
                // be negative, where the normalizer needs the clamp
                let clamped = tape.relu(graph.values);
                let graph = EdgeVector::new(Arc::clone(&graph.pattern), clamped)?;
                let logits =
                    gcn_forward(tape, &graph, self.x, &self.head, train, self.self_loops, rng)?;
                Ok(ForwardOutput {
                    logits,
                    attention: Some(attention),
                })
            }
            PdnVariant::EdgeConv { .. } => {
                let ec = self.edgeconv.as_ref().expect("prepared");
                let mut graphs = Vec::with_capacity(self.modalities.len());
                for (modality, (w, b)) in self.modalities.iter().zip(&ec.maps) {
                    graphs.push(edgeconv_scores(
                        tape,
                        &modality.adj,
                        &modality.pattern,
                        self.x,
                        *w,
                        *b,
                        ec.score_act,
                    )?);
                }
                let combined = edgeconv_combine(tape, &graphs, ec.betas, ec.combine_act)?;
                let logits = gcn_forward(
                    tape,
                    &combined,
                    self.x,
                    &self.head,
                    train,
                    self.self_loops,
                    rng,
                )?;
                Ok(ForwardOutput {
                    logits,
                    attention: None,
                })
            }
            PdnVariant::MultiScale { hops } => {
                let mixer = self.mixer.as_ref().expect("prepared");
                let norm_adj = self.norm_adj.as_ref().expect("prepared");
                let weights = mixer.weights(tape)?;
                let d0 = tape.dropout(self.x, self.head.dropout, train, rng)?;
                let xw = tape.matmul(d0, self.head.w1)?;
                let hop1 = multiscale_propagate(tape, norm_adj, xw, weights, *hops)?;
                let h = tape.relu(hop1);
                let d1 = tape.dropout(h, self.head.dropout, train, rng)?;
                let hw = tape.matmul(d1, self.head.w2)?;
                let logits = multiscale_propagate(tape, norm_adj, hw, weights, *hops)?;
                Ok(ForwardOutput {
                    logits,
                    attention: Some(weights),
                })
            }
        }
    }

    /// The learned propagation graph in CSR form, assembled from the
    /// current parameters (evaluation mode).
    pub fn learned_graph(&self, tape: &mut Tape, rng: &mut Rng) -> Result<Option<CsrMatrix>> {
        let mark = tape.mark();
        let graph = match &self.variant {
            PdnVariant::FixedGcn => self.unit_edges.clone(),
            PdnVariant::DeepEdgeMlp { .. } => Some(pathfinder_mlp_forward(
                tape,
                self.edge_feats.expect("prepared"),
                self.mlp.as_ref().expect("prepared"),
                &self.pattern,
            )?),
            PdnVariant::LinearAttention => {
                let (graph, _) = linear_pdn_attention(
                    tape,
                    self.edge_feats.expect("prepared"),
                    self.attn_logits.expect("prepared"),
                    &self.pattern,
                )?;
                let clamped = tape.relu(graph.values);
                Some(EdgeVector::new(Arc::clone(&graph.pattern), clamped)?)
            }
            PdnVariant::EdgeConv { .. } => {
                let ec = self.edgeconv.as_ref().expect("prepared");
                let mut graphs = Vec::new();
                for (modality, (w, b)) in self.modalities.iter().zip(&ec.maps) {
                    graphs.push(edgeconv_scores(
                        tape,
                        &modality.adj,
                        &modality.pattern,
                        self.x,
                        *w,
                        *b,
                        ec.score_act,
                    )?);
                }
                Some(edgeconv_combine(tape, &graphs, ec.betas, ec.combine_act)?)
            }
            PdnVariant::MultiScale { .. } => None,
        };
        let _ = rng;
        let out = graph.map(|g| g.to_csr(tape)).transpose()?;
        tape.truncate(mark);
        Ok(out)
    }

    /// Normalized propagation matrix currently used by the head, for
    /// diagnostics.
    pub fn propagation_graph(&self, tape: &mut Tape, rng: &mut Rng) -> Result<Option<CsrMatrix>> {
        let mark = tape.mark();
        let out = match self.learned_graph(tape, rng)? {
            Some(csr) => {
                let ev = EdgeVector::from_csr(tape, &Arc::new(SupportPattern::from_csr(&csr)), &csr)?;
                let norm = normalized_propagation(tape, &ev, self.self_loops)?;
                Some(norm.to_csr(tape)?)
            }
            None => None,
        };
        tape.truncate(mark);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GraphTask;
    use crate::rng::seeded;
    use crate::sparse::DenseMatrix;
    use crate::synth::{generate, SyntheticConfig};
    

    fn tiny_task() -> GraphTask {
        let config = SyntheticConfig {
            nodes_per_class: 15,
            n_classes: 3,
            p_intra: 0.2,
            q_inter: 0.1,
            node_dim: 6,
            edge_dim: 4,
            seed: 5,
            ..SyntheticConfig::default()
        };
        GraphTask::from_dataset(&generate(&config).unwrap()).unwrap()
    }

    #[test]
    fn two_hop_binary_path_graph() {
        let g = CsrMatrix::from_undirected_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])
            .unwrap();
        let h = two_hop_binary(&g).unwrap();
        assert_eq!(h.get(0, 2), Some(1.0));
        assert_eq!(h.get(1, 3), Some(1.0));
        assert_eq!(h.get(0, 3), None);
        assert_eq!(h.get(0, 0), None);
        assert!(h.is_symmetric());
    }

    #[test]
    fn every_variant_runs_forward_and_backward() {
        let task = tiny_task();
        let variants = vec![
            PdnVariant::FixedGcn,
            PdnVariant::default_pdn(),
            PdnVariant::LinearAttention,
            PdnVariant::EdgeConv { embed_dim: 4 },
            PdnVariant::MultiScale { hops: 3 },
        ];
        let labels = Arc::new(task.labels.clone());
        let mask = Arc::new((0..task.n_nodes()).collect::<Vec<_>>());
        for variant in variants {
            let mut tape = Tape::new();
            let mut rng = seeded(1);
            let model = PdnModel::init(&mut tape, variant.clone(), &task, 0.5, true, &mut rng)
                .unwrap();
            let mark = tape.mark();
            for _ in 0..2 {
                let out = model.forward(&mut tape, true, &mut rng).unwrap();
                assert_eq!(out.logits.shape(), (task.n_nodes(), task.n_classes));
                let loss = tape
                    .softmax_cross_entropy(out.logits, &labels, &mask)
                    .unwrap();
                tape.backward(loss).unwrap();
                for p in model.params() {
                    let g = tape.grad(p);
                    assert!(g.values().iter().all(|v| v.is_finite()));
                }
                tape.truncate(mark);
                tape.zero_grads();
            }
        }
    }

    #[test]
    fn attention_outputs_are_simplex_points() {
        let task = tiny_task();
        for variant in [
            PdnVariant::LinearAttention,
            PdnVariant::MultiScale { hops: 4 },
        ] {
            let mut tape = Tape::new();
            let mut rng = seeded(2);
            let model =
                PdnModel::init(&mut tape, variant, &task, 0.0, true, &mut rng).unwrap();
            let out = model.forward(&mut tape, false, &mut rng).unwrap();
            let att = out.attention.expect("variant exports attention");
            let vals = tape.data(att).values();
            assert!(vals.iter().all(|&v| v > 0.0));
            assert!((vals.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn param_names_align_with_params() {
        let task = tiny_task();
        for variant in [
            PdnVariant::FixedGcn,
            PdnVariant::default_pdn(),
            PdnVariant::LinearAttention,
            PdnVariant::EdgeConv { embed_dim: 4 },
            PdnVariant::MultiScale { hops: 2 },
        ] {
            let mut tape = Tape::new();
            let mut rng = seeded(3);
            let model =
                PdnModel::init(&mut tape, variant, &task, 0.0, true, &mut rng).unwrap();
            assert_eq!(model.params().len(), model.param_names().len());
        }
    }

    #[test]
    fn learned_graph_stays_on_support_and_nonnegative() {
        let task = tiny_task();
        let mut tape = Tape::new();
        let mut rng = seeded(4);
        let model = PdnModel::init(
            &mut tape,
            PdnVariant::default_pdn(),
            &task,
            0.0,
            true,
            &mut rng,
        )
        .unwrap();
        let graph = model.learned_graph(&mut tape, &mut rng).unwrap().unwrap();
        assert_eq!(graph.nnz(), task.pattern.nnz());
        assert!(graph.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn fixed_gcn_ignores_edge_features() {
        let task = tiny_task();
        let mut other = task.clone();
        other.edge_features = DenseMatrix::zeros(task.pattern.nnz(), task.edge_dim());
        let run = |t: &GraphTask| -> Vec<f64> {
            let mut tape = Tape::new();
            let mut rng = seeded(9);
            let model =
                PdnModel::init(&mut tape, PdnVariant::FixedGcn, t, 0.0, true, &mut rng).unwrap();
            let out = model.forward(&mut tape, false, &mut rng).unwrap();
            tape.data(out.logits).values().to_vec()
        };
        assert_eq!(run(&task), run(&other));
    }
}
