//! Experiment drivers behind the CLI: the exclusive-or construction and its
//! learnability run, scenario sweeps over the synthetic generator, the
//! relative-runtime benchmark on small-world graphs, and attention traces.

use crate::dataset::{expand_undirected_features, GraphTask, SyntheticDataset};
use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::model::PdnVariant;
use crate::rng::stream;
use crate::sparse::{CsrMatrix, DenseMatrix, SupportPattern};
use crate::synth::{
    generate, make_labels, sample_correlated_features, watts_strogatz, SyntheticConfig,
};
use crate::train::{split, train, History, SplitMode, SplitSpec, TrainConfig};
use rand::Rng as _;
use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;

/// CSV writer that refuses rows whose column count disagrees with the
/// header.
pub struct CsvGuard<W: Write> {
    out: W,
    columns: usize,
}

impl<W: Write> CsvGuard<W> {
    pub fn new(mut out: W, header: &str) -> Result<Self> {
        writeln!(out, "{header}")?;
        out.flush()?;
        Ok(Self {
            out,
            columns: header.split(',').count(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.columns {
            return Err(Error::InvalidArgument(format!(
                "csv row has {} fields, header has {}",
                fields.len(),
                self.columns
            )));
        }
        writeln!(self.out, "{}", fields.join(","))?;
        self.out.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Exclusive-or multiplex task
// ---------------------------------------------------------------------------

/// Synthetic two-layer multiplex task where the useful edges are exactly
/// those with `xor(layer1, layer2) = 1`: intra-class edges carry `(0,1)` or
/// `(1,0)` and noise (inter-class) edges carry `(1,1)`.
#[derive(Debug, Clone)]
pub struct XorTaskConfig {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub node_dim: usize,
    pub sigma_label: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    pub seed: u64,
}

impl Default for XorTaskConfig {
    fn default() -> Self {
        Self {
            n_nodes: 300,
            n_classes: 3,
            node_dim: 16,
            sigma_label: 5.0,
            p_intra: 0.08,
            p_inter: 0.08,
            seed: 0,
        }
    }
}

pub fn make_xor_task(config: &XorTaskConfig) -> Result<GraphTask> {
    let mut rng = stream(config.seed, 7);
    let n = config.n_nodes;
    let eye = {
        let mut m = DenseMatrix::zeros(config.node_dim, config.node_dim);
        for i in 0..config.node_dim {
            m.set(i, i, 1.0);
        }
        m
    };
    let node_features = sample_correlated_features(n, &eye, &mut rng)?;
    let w: Vec<f64> = (0..config.node_dim)
        .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
        .collect();
    let (labels, _) = make_labels(
        &node_features,
        &w,
        config.sigma_label,
        config.n_classes,
        &mut rng,
    )?;

    let mut edges = Vec::new();
    let mut bits = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let intra = labels[u] == labels[v];
            let prob = if intra { config.p_intra } else { config.p_inter };
            if rng.gen::<f64>() >= prob {
                continue;
            }
            edges.push((u, v));
            if intra {
                // a useful edge sits in exactly one layer
                if rng.gen::<bool>() {
                    bits.push([1.0, 0.0]);
                } else {
                    bits.push([0.0, 1.0]);
                }
            } else {
                bits.push([1.0, 1.0]);
            }
        }
    }
    let weighted: Vec<(usize, usize, f64)> = edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
    let graph = Arc::new(CsrMatrix::from_undirected_edges(n, &weighted)?);
    let pattern = Arc::new(SupportPattern::from_csr(&graph));
    let per_edge = DenseMatrix::new(edges.len(), 2, bits.concat())?;
    let edge_features = expand_undirected_features(&pattern, &edges, &per_edge)?;
    Ok(GraphTask {
        graph,
        pattern,
        node_features,
        edge_features,
        labels,
        n_classes: config.n_classes,
    })
}

#[derive(Debug, Clone)]
pub struct XorRun {
    pub seed: u64,
    pub pdn_accuracy: f64,
    pub gcn_accuracy: f64,
}

/// Trains a two-hidden-neuron pathfinder against the fixed-weight baseline
/// on fresh XOR tasks, one paired comparison per seed.
pub fn run_xor_learnability(
    base: &XorTaskConfig,
    n_seeds: u64,
    train_config: &TrainConfig,
) -> Result<Vec<XorRun>> {
    let pdn = PdnVariant::DeepEdgeMlp {
        hidden: vec![2],
        out_act: Activation::Sigmoid,
    };
    (0..n_seeds)
        .collect::<Vec<u64>>()
        .par_iter()
        .map(|&seed| {
            let task_config = XorTaskConfig {
                seed: base.seed + seed,
                ..base.clone()
            };
            let task = make_xor_task(&task_config)?;
            let s = split(
                task.n_nodes(),
                &task.labels,
                &SplitSpec {
                    mode: SplitMode::Fraction(0.8),
                    seed: task_config.seed,
                },
            )?;
            let tc = TrainConfig {
                seed: task_config.seed,
                ..train_config.clone()
            };
            let pdn_run = train(pdn.clone(), &task, &s, &tc)?;
            let gcn_run = train(PdnVariant::FixedGcn, &task, &s, &tc)?;
            Ok(XorRun {
                seed: task_config.seed,
                pdn_accuracy: pdn_run.history.final_test_accuracy(),
                gcn_accuracy: gcn_run.history.final_test_accuracy(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scenario sweeps
// ---------------------------------------------------------------------------

/// The generator parameter a scenario modifies; exactly one per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Classes,
    NodesPerClass,
    PIntra,
    QInter,
    NodeDim,
    EdgeDim,
    SigmaLabel,
    SigmaInter,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "C" => Ok(SweepParam::Classes),
            "n" => Ok(SweepParam::NodesPerClass),
            "P" => Ok(SweepParam::PIntra),
            "Q" => Ok(SweepParam::QInter),
            "F" => Ok(SweepParam::NodeDim),
            "D" => Ok(SweepParam::EdgeDim),
            "sigma_F" => Ok(SweepParam::SigmaLabel),
            "sigma_D" => Ok(SweepParam::SigmaInter),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep parameter '{other}' (one of C, n, P, Q, F, D, sigma_F, sigma_D)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Classes => "C",
            SweepParam::NodesPerClass => "n",
            SweepParam::PIntra => "P",
            SweepParam::QInter => "Q",
            SweepParam::NodeDim => "F",
            SweepParam::EdgeDim => "D",
            SweepParam::SigmaLabel => "sigma_F",
            SweepParam::SigmaInter => "sigma_D",
        }
    }

    pub fn apply(self, config: &mut SyntheticConfig, value: f64) -> Result<()> {
        let as_count = |v: f64| -> Result<usize> {
            if v < 1.0 || v.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{} must be a positive integer, got {v}",
                    self.name()
                )));
            }
            Ok(v as usize)
        };
        match self {
            SweepParam::Classes => config.n_classes = as_count(value)?,
            SweepParam::NodesPerClass => config.nodes_per_class = as_count(value)?,
            SweepParam::PIntra => config.p_intra = value,
            SweepParam::QInter => config.q_inter = value,
            SweepParam::NodeDim => config.node_dim = as_count(value)?,
            SweepParam::EdgeDim => config.edge_dim = as_count(value)?,
            SweepParam::SigmaLabel => config.sigma_label = value,
            SweepParam::SigmaInter => config.sigma_inter = value,
        }
        Ok(())
    }

    /// Shipped default sweep grids; fully overridable from the CLI or a
    /// config file.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::Classes => vec![2.0, 3.0, 4.0, 6.0, 8.0],
            SweepParam::NodesPerClass => vec![64.0, 128.0, 256.0, 512.0],
            SweepParam::PIntra => vec![0.0025, 0.005, 0.01, 0.02, 0.04],
            SweepParam::QInter => vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.05],
            SweepParam::NodeDim => vec![8.0, 16.0, 32.0, 64.0, 128.0],
            SweepParam::EdgeDim => vec![8.0, 16.0, 32.0, 64.0, 128.0],
            SweepParam::SigmaLabel => vec![1.0, 2.0, 5.0, 10.0, 20.0],
            SweepParam::SigmaInter => vec![1.0, 1.5, 2.0, 3.0, 5.0],
        }
    }
}

/// Models allowed in a scenario sweep.
pub const SCENARIO_MODELS: [&str; 4] = ["gcn", "pdn", "pdn_edgeconv", "pdn_multiscale"];

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub repetitions: usize,
    pub base: SyntheticConfig,
    pub models: Vec<PdnVariant>,
    pub train: TrainConfig,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("no sweep values".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("need >= 1 repetition".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("no models selected".into()));
        }
        for m in &self.models {
            if !SCENARIO_MODELS.contains(&m.name()) {
                return Err(Error::InvalidArgument(format!(
                    "model '{}' is not a scenario model",
                    m.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario: String,
    pub value: f64,
    pub model: String,
    pub seed: u64,
    pub test_accuracy: f64,
    pub epoch_seconds: f64,
}

pub const SCENARIO_HEADER: &str =
    "kind,scenario,value,model,seed,test_accuracy,epoch_seconds";

fn scenario_dataset_seed(base_seed: u64, value_idx: usize, rep: usize) -> u64 {
    // unique per (value, repetition); never reused inside a sweep value
    base_seed
        .wrapping_add(10_000 * (value_idx as u64 + 1))
        .wrapping_add(rep as u64)
}

/// Runs the sweep: fresh dataset per (value, repetition), every selected
/// model trained on the same dataset and split inside a repetition. Records
/// stream to the writer per repetition batch; per-value mean and std rows
/// follow each value.
pub fn run_scenario<W: Write>(spec: &ScenarioSpec, out: W) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let mut csv = CsvGuard::new(out, SCENARIO_HEADER)?;
    let mut records = Vec::new();
    for (value_idx, &value) in spec.values.iter().enumerate() {
        let mut batch: Vec<RunRecord> = (0..spec.repetitions)
            .collect::<Vec<usize>>()
            .par_iter()
            .map(|&rep| {
                let mut config = spec.base.clone();
                spec.param.apply(&mut config, value)?;
                config.seed = scenario_dataset_seed(spec.base.seed, value_idx, rep);
                let task = GraphTask::from_dataset(&generate(&config)?)?;
                let s = split(
                    task.n_nodes(),
                    &task.labels,
                    &SplitSpec {
                        mode: SplitMode::Fraction(0.8),
                        seed: config.seed,
                    },
                )?;
                let mut rows = Vec::with_capacity(spec.models.len());
                for model in &spec.models {
                    let tc = TrainConfig {
                        seed: config.seed,
                        ..spec.train.clone()
                    };
                    let outcome = train(model.clone(), &task, &s, &tc)?;
                    rows.push(RunRecord {
                        scenario: spec.param.name().to_string(),
                        value,
                        model: model.name().to_string(),
                        seed: config.seed,
                        test_accuracy: outcome.history.final_test_accuracy(),
                        epoch_seconds: outcome.mean_epoch_seconds,
                    });
                }
                Ok(rows)
            })
            .collect::<Result<Vec<Vec<RunRecord>>>>()?
            .into_iter()
            .flatten()
            .collect();
        batch.sort_by(|a, b| (&a.model, a.seed).cmp(&(&b.model, b.seed)));
        for r in &batch {
            csv.row(&[
                "run".into(),
                r.scenario.clone(),
                r.value.to_string(),
                r.model.clone(),
                r.seed.to_string(),
                r.test_accuracy.to_string(),
                r.epoch_seconds.to_string(),
            ])?;
        }
        for model in &spec.models {
            let accs: Vec<f64> = batch
                .iter()
                .filter(|r| r.model == model.name())
                .map(|r| r.test_accuracy)
                .collect();
            let times: Vec<f64> = batch
                .iter()
                .filter(|r| r.model == model.name())
                .map(|r| r.epoch_seconds)
                .collect();
            let (acc_mean, acc_std) = mean_std(&accs);
            let (time_mean, _) = mean_std(&times);
            csv.row(&[
                "mean".into(),
                spec.param.name().into(),
                value.to_string(),
                model.name().into(),
                String::new(),
                acc_mean.to_string(),
                time_mean.to_string(),
            ])?;
            csv.row(&[
                "std".into(),
                spec.param.name().into(),
                value.to_string(),
                model.name().into(),
                String::new(),
                acc_std.to_string(),
                String::new(),
            ])?;
        }
        records.extend(batch);
    }
    Ok(records)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Relative runtime benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RuntimeSpec {
    pub node_counts: Vec<usize>,
    pub degree: usize,
    pub rewire: f64,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub n_classes: usize,
    /// measured epochs, after the warmup
    pub epochs: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for RuntimeSpec {
    fn default() -> Self {
        Self {
            node_counts: vec![1 << 12],
            degree: 1 << 4,
            rewire: 0.5,
            node_dim: 1 << 7,
            edge_dim: 1 << 7,
            n_classes: 4,
            epochs: 20,
            warmup: 3,
            seed: 0,
        }
    }
}

/// The model set the runtime study compares: the static-graph baseline, the
/// linear pathfinder, and shallow/deep per-edge aggregators.
pub fn runtime_models() -> Vec<(&'static str, PdnVariant)> {
    vec![
        ("gcn", PdnVariant::FixedGcn),
        ("pdn_linear", PdnVariant::LinearAttention),
        (
            "pdn_shallow",
            PdnVariant::DeepEdgeMlp {
                hidden: vec![32],
                out_act: Activation::Sigmoid,
            },
        ),
        (
            "pdn_deep",
            PdnVariant::DeepEdgeMlp {
                hidden: vec![32, 16],
                out_act: Activation::Sigmoid,
            },
        ),
    ]
}

/// Gaussian-featured task on a Watts-Strogatz graph with uniform labels.
pub fn runtime_task(spec: &RuntimeSpec, n_nodes: usize) -> Result<GraphTask> {
    let mut rng = stream(spec.seed, 13);
    let graph = Arc::new(watts_strogatz(n_nodes, spec.degree, spec.rewire, &mut rng)?);
    let pattern = Arc::new(SupportPattern::from_csr(&graph));
    let node_features = DenseMatrix::new(
        n_nodes,
        spec.node_dim,
        (0..n_nodes * spec.node_dim)
            .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
            .collect(),
    )?;
    let n_edges = graph.nnz() / 2;
    let per_edge = DenseMatrix::new(
        n_edges,
        spec.edge_dim,
        (0..n_edges * spec.edge_dim)
            .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
            .collect(),
    )?;
    let mut edges = Vec::with_capacity(n_edges);
    for (u, v, _) in pattern.entries() {
        if u < v {
            edges.push((u, v));
        }
    }
    let edge_features = expand_undirected_features(&pattern, &edges, &per_edge)?;
    let labels: Vec<usize> = (0..n_nodes).map(|_| rng.gen_range(0..spec.n_classes)).collect();
    Ok(GraphTask {
        graph,
        pattern,
        node_features,
        edge_features,
        labels,
        n_classes: spec.n_classes,
    })
}

#[derive(Debug, Clone)]
pub struct RuntimeRecord {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub model: String,
    pub mean_epoch_seconds: f64,
    pub relative_to_gcn: f64,
}

pub const RUNTIME_HEADER: &str = "n_nodes,n_edges,model,mean_epoch_seconds,relative_to_gcn";

/// Mean training-epoch wall time per model and graph size. Runs strictly
/// sequentially so timings do not interfere.
pub fn run_runtime<W: Write>(spec: &RuntimeSpec, out: W) -> Result<Vec<RuntimeRecord>> {
    let mut csv = CsvGuard::new(out, RUNTIME_HEADER)?;
    let mut records = Vec::new();
    for &n_nodes in &spec.node_counts {
        let task = runtime_task(spec, n_nodes)?;
        let s = split(
            task.n_nodes(),
            &task.labels,
            &SplitSpec {
                mode: SplitMode::Fraction(0.8),
                seed: spec.seed,
            },
        )?;
        let mut gcn_time = None;
        for (label, variant) in runtime_models() {
            let mean = time_epochs(variant, &task, &s, spec)?;
            if label == "gcn" {
                gcn_time = Some(mean);
            }
            let rel = mean / gcn_time.expect("gcn runs first");
            let record = RuntimeRecord {
                n_nodes,
                n_edges: task.graph.nnz() / 2,
                model: label.to_string(),
                mean_epoch_seconds: mean,
                relative_to_gcn: rel,
            };
            csv.row(&[
                record.n_nodes.to_string(),
                record.n_edges.to_string(),
                record.model.clone(),
                record.mean_epoch_seconds.to_string(),
                record.relative_to_gcn.to_string(),
            ])?;
            records.push(record);
        }
    }
    Ok(records)
}

/// Wall-clock mean over the measured window: warmup epochs run first and
/// are discarded.
fn time_epochs(
    variant: PdnVariant,
    task: &GraphTask,
    s: &crate::train::Split,
    spec: &RuntimeSpec,
) -> Result<f64> {
    use crate::autodiff::Tape;
    use crate::model::PdnModel;
    use crate::train::AdamState;
    use std::time::Instant;

    let config = TrainConfig {
        seed: spec.seed,
        ..TrainConfig::default()
    };
    let mut tape = Tape::new();
    let mut init_rng = stream(config.seed, 0);
    let mut dropout_rng = stream(config.seed, 1);
    let model = PdnModel::init(
        &mut tape,
        variant,
        task,
        config.dropout,
        config.self_loops,
        &mut init_rng,
    )?;
    let params = model.params();
    let mut adam = AdamState::for_params(&tape, &params);
    let mark = tape.mark();
    let labels = Arc::new(task.labels.clone());
    let mask = Arc::new(s.train.clone());
    let mut measured = 0.0;
    for epoch in 0..(spec.warmup + spec.epochs) {
        let started = Instant::now();
        let out = model.forward(&mut tape, true, &mut dropout_rng)?;
        let ce = tape.softmax_cross_entropy(out.logits, &labels, &mask)?;
        let penalty = tape.l2_penalty(&params, config.l2)?;
        let loss = tape.add(ce, penalty)?;
        tape.backward(loss)?;
        adam.step(&mut tape, &params, config.learning_rate)?;
        tape.truncate(mark);
        tape.zero_grads();
        if epoch >= spec.warmup {
            measured += started.elapsed().as_secs_f64();
        }
    }
    Ok(measured / spec.epochs as f64)
}

// ---------------------------------------------------------------------------
// Attention traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub labels: Vec<String>,
    /// per-epoch mean attention over repetitions, epochs x labels
    pub mean_trace: Vec<Vec<f64>>,
    /// final-epoch attention per repetition
    pub per_run_final: Vec<Vec<f64>>,
    pub histories: Vec<History>,
}

impl AttentionTrace {
    pub fn final_mean(&self) -> Vec<f64> {
        let k = self.labels.len();
        let mut out = vec![0.0; k];
        for run in &self.per_run_final {
            for (o, v) in out.iter_mut().zip(run) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= self.per_run_final.len() as f64;
        }
        out
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let header = format!("epoch,{}", self.labels.join(","));
        let mut csv = CsvGuard::new(out, &header)?;
        for (e, row) in self.mean_trace.iter().enumerate() {
            let mut fields = vec![(e + 1).to_string()];
            fields.extend(row.iter().map(|v| v.to_string()));
            csv.row(&fields)?;
        }
        Ok(())
    }
}

/// Repeated training of one attention-bearing variant, averaging the
/// per-epoch attention vectors across repetitions.
pub fn run_attention_trace(
    variant: PdnVariant,
    task: &GraphTask,
    repetitions: usize,
    train_config: &TrainConfig,
    split_spec_mode: SplitMode,
) -> Result<AttentionTrace> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("need >= 1 repetition".into()));
    }
    let labels = variant
        .attention_labels(task.edge_dim())
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "model '{}' exports no attention",
                variant.name()
            ))
        })?;
    let histories: Vec<History> = (0..repetitions)
        .collect::<Vec<usize>>()
        .par_iter()
        .map(|&rep| {
            let seed = train_config.seed + rep as u64;
            let s = split(
                task.n_nodes(),
                &task.labels,
                &SplitSpec {
                    mode: split_spec_mode,
                    seed,
                },
            )?;
            let tc = TrainConfig {
                seed,
                ..train_config.clone()
            };
            Ok(train(variant.clone(), task, &s, &tc)?.history)
        })
        .collect::<Result<_>>()?;

    let epochs = train_config.epochs;
    let k = labels.len();
    let mut mean_trace = vec![vec![0.0; k]; epochs];
    for h in &histories {
        for (e, record) in h.records.iter().enumerate() {
            let att = record
                .attention
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("missing attention record".into()))?;
            for (acc, v) in mean_trace[e].iter_mut().zip(att) {
                *acc += v;
            }
        }
    }
    for row in &mut mean_trace {
        for v in row.iter_mut() {
            *v /= repetitions as f64;
        }
    }
    let per_run_final = histories
        .iter()
        .map(|h| h.records.last().and_then(|r| r.attention.clone()).unwrap_or_default())
        .collect();
    Ok(AttentionTrace {
        labels,
        mean_trace,
        per_run_final,
        histories,
    })
}

/// Task view for the linear-attention interpretability run: the dataset's
/// graph with raw (unstandardized) neighborhood-similarity features, which
/// are nonnegative and keep the attention-weighted edge weights directly
/// usable as a propagation graph.
pub fn similarity_task(ds: &SyntheticDataset) -> Result<(GraphTask, Vec<String>)> {
    let fm = crate::edge_features::feature_matrix(&ds.graph, false)?;
    let names: Vec<String> = crate::edge_features::EdgeFeatureMatrix::metric_names()
        .into_iter()
        .map(String::from)
        .collect();
    let task = GraphTask::from_dataset(ds)?.with_pattern_features(fm.values)?;
    Ok((task, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_task_bits_encode_edge_usefulness() {
        let task = make_xor_task(&XorTaskConfig {
            n_nodes: 60,
            seed: 3,
            ..XorTaskConfig::default()
        })
        .unwrap();
        for (u, v, k) in task.pattern.entries() {
            let bits = task.edge_features.row(k);
            let intra = task.labels[u] == task.labels[v];
            let xor = (bits[0] != bits[1]) as usize;
            assert_eq!(xor == 1, intra, "bits {bits:?} for intra={intra}");
        }
    }

    #[test]
    fn sweep_param_round_trip_and_apply() {
        for name in ["C", "n", "P", "Q", "F", "D", "sigma_F", "sigma_D"] {
            let p = SweepParam::parse(name).unwrap();
            assert_eq!(p.name(), name);
            assert!(!p.default_values().is_empty());
        }
        let mut config = SyntheticConfig::default();
        SweepParam::parse("Q").unwrap().apply(&mut config, 0.02).unwrap();
        assert_eq!(config.q_inter, 0.02);
        assert!(SweepParam::parse("C")
            .unwrap()
            .apply(&mut config, 2.5)
            .is_err());
    }

    #[test]
    fn scenario_spec_counts_records() {
        let spec = ScenarioSpec {
            param: SweepParam::QInter,
            values: vec![0.02, 0.05],
            repetitions: 2,
            base: SyntheticConfig {
                nodes_per_class: 20,
                node_dim: 6,
                edge_dim: 4,
                p_intra: 0.1,
                ..SyntheticConfig::default()
            },
            models: vec![PdnVariant::FixedGcn, PdnVariant::default_pdn()],
            train: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
        };
        let mut buf = Vec::new();
        let records = run_scenario(&spec, &mut buf).unwrap();
        assert_eq!(records.len(), 2 * 2 * 2);
        let text = String::from_utf8(buf).unwrap();
        let runs = text.lines().filter(|l| l.starts_with("run,")).count();
        let means = text.lines().filter(|l| l.starts_with("mean,")).count();
        assert_eq!(runs, 8);
        assert_eq!(means, 4);
        // seeds unique within each sweep value
        for value in ["0.02", "0.05"] {
            let seeds: Vec<&str> = text
                .lines()
                .filter(|l| l.starts_with("run,") && l.split(',').nth(2) == Some(value))
                .map(|l| l.split(',').nth(4).unwrap())
                .collect();
            let mut unique = seeds.clone();
            unique.sort();
            unique.dedup();
            assert_eq!(unique.len() * 2, seeds.len()); // 2 models share a seed
        }
    }

    #[test]
    fn scenario_rejects_non_scenario_models() {
        let spec = ScenarioSpec {
            param: SweepParam::QInter,
            values: vec![0.01],
            repetitions: 1,
            base: SyntheticConfig::default(),
            models: vec![PdnVariant::LinearAttention],
            train: TrainConfig::default(),
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn csv_guard_rejects_ragged_rows() {
        let mut buf = Vec::new();
        let mut csv = CsvGuard::new(&mut buf, "a,b,c").unwrap();
        assert!(csv.row(&["1".into(), "2".into(), "3".into()]).is_ok());
        assert!(csv.row(&["1".into(), "2".into()]).is_err());
    }

    #[test]
    fn runtime_task_shapes() {
        let spec = RuntimeSpec {
            node_counts: vec![128],
            degree: 4,
            node_dim: 8,
            edge_dim: 8,
            ..RuntimeSpec::default()
        };
        let task = runtime_task(&spec, 128).unwrap();
        assert_eq!(task.n_nodes(), 128);
        assert_eq!(task.graph.nnz(), 128 * 4);
        assert_eq!(task.edge_features.n_rows(), task.pattern.nnz());
        assert!(task.labels.iter().all(|&l| l < 4));
    }

    #[test]
    fn attention_trace_rows_are_simplex_points() {
        let config = SyntheticConfig {
            nodes_per_class: 20,
            node_dim: 6,
            edge_dim: 4,
            p_intra: 0.15,
            q_inter: 0.05,
            seed: 5,
            ..SyntheticConfig::default()
        };
        let task = GraphTask::from_dataset(&generate(&config).unwrap()).unwrap();
        let trace = run_attention_trace(
            PdnVariant::MultiScale { hops: 3 },
            &task,
            2,
            &TrainConfig {
                epochs: 4,
                ..TrainConfig::default()
            },
            SplitMode::Fraction(0.8),
        )
        .unwrap();
        assert_eq!(trace.mean_trace.len(), 4);
        for row in &trace.mean_trace {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        assert_eq!(trace.labels, vec!["p1", "p2", "p3"]);
    }
}
