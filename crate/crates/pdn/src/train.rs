//! Optimization loop: Adam, train/test splits, accuracy, and per-epoch
//! history with optional attention traces.

use crate::autodiff::{Tape, Value};
use crate::dataset::GraphTask;
use crate::error::{Error, Result};
use crate::model::{ForwardOutput, PdnModel, PdnVariant};
use crate::rng::stream;
use crate::sparse::DenseMatrix;
use rand::seq::SliceRandom;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

/// Training hyperparameters. Defaults: learning rate 1e-2 over 200 epochs,
/// dropout 0.5, l2 coefficient 1e-3, unit self loops on the learned graph.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub l2: f64,
    pub seed: u64,
    pub self_loops: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 200,
            dropout: 0.5,
            l2: 1e-3,
            seed: 0,
            self_loops: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("need >= 1 epoch".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.l2 < 0.0 {
            return Err(Error::InvalidArgument("negative l2 coefficient".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Per-parameter first/second moment state with a shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_lens: &[usize]) -> Self {
        Self {
            m: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn for_params(tape: &Tape, params: &[Value]) -> Self {
        let lens: Vec<usize> = params
            .iter()
            .map(|p| tape.data(*p).values().len())
            .collect();
        Self::new(&lens)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter from the gradients
    /// accumulated on the tape. State is isolated per parameter, so the
    /// registration order never changes the result.
    pub fn step(&mut self, tape: &mut Tape, params: &[Value], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for {} moment slots",
                params.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        for (idx, p) in params.iter().enumerate() {
            let grad = tape.grad(*p).values().to_vec();
            if grad.len() != self.m[idx].len() {
                return Err(Error::DimensionMismatch(format!(
                    "parameter {idx} has {} entries, state has {}",
                    grad.len(),
                    self.m[idx].len()
                )));
            }
            let data = tape.data_mut(*p).values_mut();
            adam_update(
                data,
                &grad,
                &mut self.m[idx],
                &mut self.v[idx],
                self.step,
                lr,
                self.beta1,
                self.beta2,
                self.epsilon,
            );
        }
        Ok(())
    }
}

/// Bias-corrected Adam on one flat parameter:
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..param.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    /// Uniform shuffle, first `floor(frac * n)` nodes train.
    Fraction(f64),
    /// `k` uniformly chosen labeled nodes per class train, the rest test.
    PerClass(usize),
}

#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(n_nodes: usize, labels: &[usize], spec: &SplitSpec) -> Result<Split> {
    if labels.len() != n_nodes {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} nodes",
            labels.len(),
            n_nodes
        )));
    }
    let mut rng = stream(spec.seed, 100);
    let (mut train, mut test): (Vec<usize>, Vec<usize>) = match spec.mode {
        SplitMode::Fraction(frac) => {
            if !(0.0..1.0).contains(&frac) || frac == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "train fraction {frac} outside (0, 1)"
                )));
            }
            let mut order: Vec<usize> = (0..n_nodes).collect();
            order.shuffle(&mut rng);
            let cut = (n_nodes as f64 * frac).floor() as usize;
            (order[..cut].to_vec(), order[cut..].to_vec())
        }
        SplitMode::PerClass(k) => {
            if k == 0 {
                return Err(Error::InvalidArgument("need k >= 1 per class".into()));
            }
            let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l].push(i);
            }
            if let Some(small) = by_class.iter().find(|c| c.len() < k + 1) {
                return Err(Error::InvalidArgument(format!(
                    "{k}-shot split needs every class above {k} nodes, smallest has {}",
                    small.len()
                )));
            }
            let mut train = Vec::with_capacity(k * n_classes);
            let mut test = Vec::new();
            for class in &mut by_class {
                class.shuffle(&mut rng);
                train.extend_from_slice(&class[..k]);
                test.extend_from_slice(&class[k..]);
            }
            (train, test)
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(
            "split leaves an empty train or test set".into(),
        ));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

/// Fraction of masked rows whose argmax matches the label; argmax ties go to
/// the lowest class index.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut hits = 0usize;
    for &r in mask {
        let row = logits.row(r);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        if best == labels[r] {
            hits += 1;
        }
    }
    Ok(hits as f64 / mask.len() as f64)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    /// cross-entropy on the train mask after the epoch's update, evaluated
    /// with dropout off and without the l2 term, so it pairs with the
    /// reported accuracies
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub attention: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub attention_labels: Option<Vec<String>>,
}

impl History {
    pub fn final_test_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.test_acc)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = "epoch,loss,train_acc,test_acc".to_string();
        if let Some(labels) = &self.attention_labels {
            for l in labels {
                header.push(',');
                header.push_str(l);
            }
        }
        writeln!(w, "{header}")?;
        let width = header.split(',').count();
        for r in &self.records {
            let mut line = format!("{},{},{},{}", r.epoch, r.loss, r.train_acc, r.test_acc);
            if let Some(att) = &r.attention {
                for v in att {
                    line.push(',');
                    line.push_str(&v.to_string());
                }
            }
            let cols = line.split(',').count();
            if cols != width {
                return Err(Error::InvalidArgument(format!(
                    "history row has {cols} columns, header has {width}"
                )));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)
    }
}

pub struct TrainOutcome {
    pub tape: Tape,
    pub model: PdnModel,
    pub history: History,
    pub final_logits: DenseMatrix,
    /// mean wall-clock seconds per training epoch (forward, backward,
    /// update), excluding evaluation passes
    pub mean_epoch_seconds: f64,
}

/// Full-graph training of one model variant. Deterministic for a fixed
/// config: model init, dropout, and split seeds are all derived streams of
/// `config.seed`.
pub fn train(
    variant: PdnVariant,
    task: &GraphTask,
    split: &Split,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
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
    let train_mask = Arc::new(split.train.clone());
    let mut history = History {
        records: Vec::with_capacity(config.epochs),
        attention_labels: model.variant.attention_labels(task.edge_dim()),
    };
    let mut final_logits = DenseMatrix::zeros(task.n_nodes(), task.n_classes);
    let mut train_seconds = 0.0;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let ForwardOutput { logits, .. } = model.forward(&mut tape, true, &mut dropout_rng)?;
        let ce = tape.softmax_cross_entropy(logits, &labels, &train_mask)?;
        if !tape.data(ce).get(0, 0).is_finite() {
            let detail = diverged_detail(&tape, &model, &params);
            return Err(Error::TrainingDiverged { epoch, detail });
        }
        let penalty = tape.l2_penalty(&params, config.l2)?;
        let loss = tape.add(ce, penalty)?;
        tape.backward(loss)?;
        adam.step(&mut tape, &params, config.learning_rate)?;
        tape.truncate(mark);
        tape.zero_grads();
        train_seconds += started.elapsed().as_secs_f64();

        // evaluation pass with dropout off
        let eval = model.forward(&mut tape, false, &mut dropout_rng)?;
        let eval_ce = tape.softmax_cross_entropy(eval.logits, &labels, &train_mask)?;
        let ce_value = tape.data(eval_ce).get(0, 0);
        let logits_data = tape.data(eval.logits).clone();
        let attention = eval
            .attention
            .map(|a| tape.data(a).values().to_vec());
        let train_acc = accuracy(&logits_data, &labels, &split.train)?;
        let test_acc = accuracy(&logits_data, &labels, &split.test)?;
        if epoch == config.epochs {
            final_logits = logits_data;
        }
        tape.truncate(mark);
        history.records.push(EpochRecord {
            epoch,
            loss: ce_value,
            train_acc,
            test_acc,
            attention,
        });
    }

    Ok(TrainOutcome {
        tape,
        model,
        history,
        final_logits,
        mean_epoch_seconds: train_seconds / config.epochs as f64,
    })
}

fn diverged_detail(tape: &Tape, model: &PdnModel, params: &[Value]) -> String {
    let mut worst = (String::new(), 0.0f64);
    for (name, p) in model.param_names().iter().zip(params) {
        let norm = tape.data(*p).frobenius_norm();
        if norm >= worst.1 {
            worst = (name.clone(), norm);
        }
    }
    format!(
        "loss is not finite; largest parameter norm {:.3e} at {}",
        worst.1, worst.0
    )
}
