//! Multi-task optimization with Adam over the regularized loss.
//!
//! Each step draws one mini-batch per task, sums the task losses, adds
//! `c * sum_l L_MTL(alpha_l)` and applies a single Adam update to all
//! parameters. Runs are fully determined by the config seed.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{select_rows, TaskDataset, TaskSplits, Targets};
use crate::error::{Result, TaanError};
use crate::matrix::Matrix;
use crate::metrics::{build_gram, mean_pairwise_distance, GramCache};
use crate::network::{ArchSpec, ModelGradients, TaanModel};
use crate::regularizers::{reg_grad, reg_value, RegConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over batch and outputs of the squared error.
    #[default]
    SquaredError,
    /// Softmax cross-entropy against class-index targets.
    CrossEntropy,
}

/// Serialized as its display form: `mse`, `accuracy` or `map@k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    #[default]
    Mse,
    Accuracy,
    MapAtK(usize),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mse => f.write_str("mse"),
            Metric::Accuracy => f.write_str("accuracy"),
            Metric::MapAtK(k) => write!(f, "map@{k}"),
        }
    }
}

impl TryFrom<String> for Metric {
    type Error = TaanError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.to_string()
    }
}

impl FromStr for Metric {
    type Err = TaanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "accuracy" => Ok(Metric::Accuracy),
            _ => s
                .strip_prefix("map@")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(Metric::MapAtK)
                .ok_or_else(|| TaanError::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reg: RegConfig,
    /// Loss of each task; an empty list means squared error everywhere.
    pub losses: Vec<LossKind>,
    pub val_metric: Metric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            reg: RegConfig::none(),
            losses: Vec::new(),
            val_metric: Metric::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TaanError::InvalidArgument(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        RegConfig::new(self.reg.kind, self.reg.coefficient)?;
        Ok(())
    }

    pub fn loss_for(&self, task: usize) -> LossKind {
        self.losses.get(task).copied().unwrap_or_default()
    }
}

/// Bias-corrected Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize], learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(model: &TaanModel, config: &TrainConfig) -> Self {
        let shapes: Vec<usize> = model.param_tensors().iter().map(|t| t.len()).collect();
        AdamState::new(&shapes, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(TaanError::Shape(format!(
            "{} parameter tensors, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(TaanError::Shape(format!(
                "tensor {i}: {} parameters, {} gradients, {} optimizer entries",
                p.len(),
                g.len(),
                state.first[i].len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Loss value and its gradient with respect to the outputs.
pub fn task_loss(kind: LossKind, outputs: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    let rows = outputs.rows();
    if targets.len() != rows {
        return Err(TaanError::Shape(format!("{rows} outputs but {} targets", targets.len())));
    }
    if rows == 0 {
        return Err(TaanError::EmptyDataset("cannot compute a loss on zero rows".into()));
    }
    match (kind, targets) {
        (LossKind::SquaredError, Targets::Real(y)) => {
            if y.cols() != outputs.cols() {
                return Err(TaanError::Shape(format!(
                    "{} outputs per row but {} targets",
                    outputs.cols(),
                    y.cols()
                )));
            }
            let n = (rows * outputs.cols()) as f64;
            let mut grad = Matrix::zeros(rows, outputs.cols());
            let mut loss = 0.0;
            for ((g, &o), &t) in grad.as_mut_slice().iter_mut().zip(outputs.as_slice()).zip(y.as_slice()) {
                let e = o - t;
                loss += e * e;
                *g = 2.0 * e / n;
            }
            Ok((loss / n, grad))
        }
        (LossKind::CrossEntropy, Targets::Labels(labels)) => {
            let k = outputs.cols();
            let mut grad = Matrix::zeros(rows, k);
            let mut loss = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                if label >= k {
                    return Err(TaanError::Shape(format!("label {label} out of range for {k} outputs")));
                }
                let row = outputs.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_z = max + sum.ln();
                loss += log_z - row[label];
                for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
                    let p = (row[j] - log_z).exp();
                    *g = (p - if j == label { 1.0 } else { 0.0 }) / rows as f64;
                }
            }
            Ok((loss / rows as f64, grad))
        }
        (kind, _) => Err(TaanError::InvalidArgument(format!(
            "loss {kind:?} does not match the target type"
        ))),
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean over examples of average precision at `k`, ranking labels by score.
/// Examples without any relevant label are skipped.
pub fn map_at_k(scores: &Matrix, relevant: &Matrix, k: usize) -> Result<f64> {
    if scores.shape() != relevant.shape() {
        return Err(TaanError::Shape("score and relevance matrices differ in shape".into()));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for r in 0..scores.rows() {
        let rel = relevant.row(r);
        let positives = rel.iter().filter(|&&v| v > 0.5).count();
        if positives == 0 {
            continue;
        }
        let row = scores.row(r);
        let mut order: Vec<usize> = (0..row.len()).collect();
        // Stable sort: ties keep label order.
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank, &label) in order.iter().take(k).enumerate() {
            if rel[label] > 0.5 {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        total += ap / positives.min(k) as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(TaanError::EmptyDataset("no example has a relevant label".into()));
    }
    Ok(total / counted as f64)
}

/// Scores a model's predictions on one dataset.
pub fn evaluate(model: &TaanModel, dataset: &TaskDataset, task: usize, metric: Metric) -> Result<f64> {
    if dataset.is_empty() {
        return Err(TaanError::EmptyDataset(format!("task {task} {} split", dataset.split)));
    }
    let out = model.predict(task, &dataset.inputs)?;
    score(&out, &dataset.targets, metric)
}

/// Scores raw predictions against targets.
pub fn score(out: &Matrix, targets: &Targets, metric: Metric) -> Result<f64> {
    if out.rows() == 0 {
        return Err(TaanError::EmptyDataset("no predictions to score".into()));
    }
    if out.rows() != targets.len() {
        return Err(TaanError::Shape(format!("{} predictions for {} targets", out.rows(), targets.len())));
    }
    match (metric, targets) {
        (Metric::Mse, Targets::Real(_)) => task_loss(LossKind::SquaredError, out, targets).map(|(l, _)| l),
        (Metric::Accuracy, Targets::Labels(labels)) => {
            let hits = labels
                .iter()
                .enumerate()
                .filter(|&(r, &l)| argmax(out.row(r)) == l)
                .count();
            Ok(hits as f64 / labels.len() as f64)
        }
        (Metric::Accuracy, Targets::Real(y)) => {
            let hits = (0..y.rows())
                .filter(|&r| {
                    if y.cols() == 1 {
                        (out[(r, 0)] > 0.5) == (y[(r, 0)] > 0.5)
                    } else {
                        argmax(out.row(r)) == argmax(y.row(r))
                    }
                })
                .count();
            Ok(hits as f64 / y.rows() as f64)
        }
        (Metric::MapAtK(k), Targets::Real(y)) => map_at_k(out, y, k),
        (m, _) => Err(TaanError::InvalidArgument(format!(
            "metric {m} does not apply to these targets"
        ))),
    }
}

/// One line of the training history: task-level and layer-level values for
/// an (epoch, task, layer) triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub task_id: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub reg_value: f64,
    pub layer_id: usize,
    pub mean_pairwise_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    /// Training loss summed over tasks at `epoch`.
    pub fn total_train_loss(&self, epoch: usize) -> Option<f64> {
        let mut seen = std::collections::BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.epoch == epoch) {
            seen.entry(r.task_id).or_insert(r.train_loss);
        }
        (!seen.is_empty()).then(|| seen.values().sum())
    }

    /// Mean pairwise activation distance at `epoch`, averaged over layers.
    pub fn mean_distance(&self, epoch: usize) -> Option<f64> {
        let mut seen = std::collections::BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.epoch == epoch) {
            seen.entry(r.layer_id).or_insert(r.mean_pairwise_distance);
        }
        (!seen.is_empty()).then(|| seen.values().sum::<f64>() / seen.len() as f64)
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.rows.iter().map(|r| r.epoch).max()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row).map_err(|e| TaanError::Serde(e.to_string()))?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "epoch",
                "task_id",
                "train_loss",
                "val_metric",
                "reg_value",
                "layer_id",
                "mean_pairwise_distance",
            ])
            .map_err(|e| TaanError::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| TaanError::Serde(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| TaanError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_data(model: &TaanModel, data: &[TaskSplits]) -> Result<()> {
    if data.len() != model.task_count() {
        return Err(TaanError::Shape(format!(
            "{} task datasets for a {}-task model",
            data.len(),
            model.task_count()
        )));
    }
    for (t, d) in data.iter().enumerate() {
        for ds in std::iter::once(&d.train).chain(d.val.iter()).chain(d.test.iter()) {
            if ds.inputs.cols() != model.arch().input_dim {
                return Err(TaanError::Shape(format!(
                    "task {t} {} inputs have {} columns, model expects {}",
                    ds.split,
                    ds.inputs.cols(),
                    model.arch().input_dim
                )));
            }
        }
        if d.train.is_empty() {
            return Err(TaanError::EmptyDataset(format!("task {t} has no training rows")));
        }
    }
    Ok(())
}

fn record_epoch(
    model: &TaanModel,
    data: &[TaskSplits],
    config: &TrainConfig,
    cache: &GramCache,
    epoch: usize,
    history: &mut History,
) -> Result<()> {
    let task_stats: Vec<(f64, Option<f64>)> = (0..model.task_count())
        .into_par_iter()
        .map(|t| {
            let train = &data[t].train;
            let out = model.predict(t, &train.inputs)?;
            let (loss, _) = task_loss(config.loss_for(t), &out, &train.targets)?;
            let val = match &data[t].val {
                Some(v) if !v.is_empty() => Some(evaluate(model, v, t, config.val_metric)?),
                _ => None,
            };
            Ok((loss, val))
        })
        .collect::<Result<_>>()?;
    let layer_stats: Vec<(f64, f64)> = model
        .layers()
        .iter()
        .map(|l| {
            let reg = reg_value(config.reg.kind, &l.coords, cache)?;
            let dist = mean_pairwise_distance(&l.coords, cache)?;
            Ok((reg, dist))
        })
        .collect::<Result<_>>()?;
    for (task_id, &(train_loss, val_metric)) in task_stats.iter().enumerate() {
        for (layer_id, &(reg_value, mean_pairwise_distance)) in layer_stats.iter().enumerate() {
            history.rows.push(HistoryRow {
                epoch,
                task_id,
                train_loss,
                val_metric,
                reg_value,
                layer_id,
                mean_pairwise_distance,
            });
        }
    }
    Ok(())
}

/// Gradient of the full objective on one multi-task step.
pub fn step_gradients(
    model: &TaanModel,
    batches: &[(Matrix, Targets)],
    config: &TrainConfig,
    cache: &GramCache,
) -> Result<(f64, ModelGradients)> {
    let per_task: Vec<(f64, ModelGradients)> = batches
        .par_iter()
        .enumerate()
        .map(|(t, (x, y))| {
            let (out, trace) = model.forward(t, x)?;
            let (loss, dout) = task_loss(config.loss_for(t), &out, y)?;
            Ok((loss, model.backward(&trace, &dout)?))
        })
        .collect::<Result<_>>()?;
    let mut grads = ModelGradients::zeros_like(model);
    let mut loss = 0.0;
    // Fixed task order keeps the reduction deterministic.
    for (l, g) in &per_task {
        loss += l;
        grads.accumulate(g);
    }
    if !config.reg.is_inactive() {
        for (layer, lg) in model.layers().iter().zip(grads.layers.iter_mut()) {
            loss += config.reg.coefficient * reg_value(config.reg.kind, &layer.coords, cache)?;
            let rg = reg_grad(config.reg.kind, &layer.coords, cache)?;
            for (g, r) in lg.coords.as_mut_slice().iter_mut().zip(rg.as_slice()) {
                *g += config.reg.coefficient * r;
            }
        }
    }
    Ok((loss, grads))
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Trains `model` for `config.epochs` epochs. The history has one block of
/// rows for the initial state (epoch 0) and one after every epoch.
pub fn train(mut model: TaanModel, data: &[TaskSplits], config: &TrainConfig) -> Result<(TaanModel, History)> {
    config.validate()?;
    check_data(&model, data)?;
    let cache = build_gram(model.grid(), model.mixture());
    let mut history = History::default();
    record_epoch(&model, data, config, &cache, 0, &mut history)?;
    if config.epochs == 0 {
        return Ok((model, history));
    }

    let mut adam = AdamState::for_model(&model, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tasks = model.task_count();
    let sizes: Vec<usize> = data.iter().map(|d| d.train.len()).collect();
    let steps = sizes
        .iter()
        .map(|&n| n.div_ceil(config.batch_size))
        .max()
        .unwrap_or(0);
    let mut orders: Vec<Vec<usize>> = sizes.iter().map(|&n| shuffled(n, &mut rng)).collect();
    let mut cursors = vec![0usize; tasks];

    for epoch in 1..=config.epochs {
        for _ in 0..steps {
            let batches: Vec<(Matrix, Targets)> = (0..tasks)
                .map(|t| {
                    let n = sizes[t];
                    let take = config.batch_size.min(n);
                    let mut idx = Vec::with_capacity(take);
                    for _ in 0..take {
                        if cursors[t] == n {
                            orders[t] = shuffled(n, &mut rng);
                            cursors[t] = 0;
                        }
                        idx.push(orders[t][cursors[t]]);
                        cursors[t] += 1;
                    }
                    let d = &data[t].train;
                    let targets = match &d.targets {
                        Targets::Real(m) => Targets::Real(select_rows(m, &idx)),
                        Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
                    };
                    (select_rows(&d.inputs, &idx), targets)
                })
                .collect();
            let (_, grads) = step_gradients(&model, &batches, config, &cache)?;
            let grad_views = grads.tensors();
            adam_step(&mut model.param_tensors_mut(), &grad_views, &mut adam)?;
        }
        record_epoch(&model, data, config, &cache, epoch, &mut history)?;
    }
    Ok((model, history))
}

/// Single-task baseline: one independent network per task, each with the
/// same hidden architecture and seed as the multi-task model.
pub fn train_independent(arch: &ArchSpec, data: &[TaskSplits], config: &TrainConfig) -> Result<Vec<(TaanModel, History)>> {
    if data.len() != arch.task_count() {
        return Err(TaanError::Shape(format!(
            "{} task datasets for {} tasks",
            data.len(),
            arch.task_count()
        )));
    }
    data.iter()
        .enumerate()
        .map(|(t, d)| {
            let single = ArchSpec {
                output_dims: vec![arch.output_dims[t]],
                ..arch.clone()
            };
            let model = TaanModel::build(single, config.seed)?;
            let mut cfg = config.clone();
            cfg.losses = vec![config.loss_for(t)];
            let mut task_data = d.clone();
            for ds in std::iter::once(&mut task_data.train)
                .chain(task_data.val.iter_mut())
                .chain(task_data.test.iter_mut())
            {
                ds.task = 0;
            }
            train(model, std::slice::from_ref(&task_data), &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_is_learning_rate() {
        let mut p = [0.5];
        let mut s = AdamState::new(&[1], 0.001, 0.9, 0.98, 1e-8);
        adam_step(&mut [&mut p[..]], &[&[1.0][..]], &mut s).unwrap();
        assert!((p[0] - (0.5 - 0.001)).abs() < 1e-10);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(&[3], 0.01, 0.9, 0.98, 1e-8);
        for _ in 0..5 {
            adam_step(&mut [&mut p[..]], &[&[0.0; 3][..]], &mut s).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(&[2], 0.01, 0.9, 0.98, 1e-8);
        let mut last = p.clone();
        for _ in 0..500 {
            last.copy_from_slice(&p);
            adam_step(&mut [&mut p[..]], &[&[3.0, -0.2][..]], &mut s).unwrap();
        }
        assert!(((last[0] - p[0]) - 0.01).abs() < 1e-6);
        assert!(((p[1] - last[1]) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_shape_errors() {
        let mut p = [0.0; 2];
        let mut s = AdamState::new(&[2], 0.01, 0.9, 0.98, 1e-8);
        assert!(adam_step(&mut [&mut p[..]], &[&[1.0][..]], &mut s).is_err());
        assert!(adam_step(&mut [&mut p[..]], &[], &mut s).is_err());
    }

    #[test]
    fn squared_error_gradient() {
        let out = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap();
        let y = Targets::Real(Matrix::from_rows(&[vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap());
        let (l, g) = task_loss(LossKind::SquaredError, &out, &y).unwrap();
        assert!((l - 1.5).abs() < 1e-15);
        assert_eq!(g.as_slice(), &[0.5, 0.0, -0.5, -1.0]);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_difference() {
        let out = Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![1.0, 0.5, -0.5]]).unwrap();
        let y = Targets::Labels(vec![2, 1]);
        let (_, g) = task_loss(LossKind::CrossEntropy, &out, &y).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut up = out.clone();
            let mut dn = out.clone();
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            let fd = (task_loss(LossKind::CrossEntropy, &up, &y).unwrap().0
                - task_loss(LossKind::CrossEntropy, &dn, &y).unwrap().0)
                / (2.0 * h);
            assert!((fd - g.as_slice()[i]).abs() < 1e-8);
        }
        assert!(task_loss(LossKind::CrossEntropy, &out, &Targets::Labels(vec![3, 0])).is_err());
        assert!(task_loss(LossKind::SquaredError, &out, &y).is_err());
    }

    #[test]
    fn map_at_k_fixture() {
        // Example 1: relevant {0, 2}; ranking 2, 1, 0, 3 -> hits at ranks 1 and 3.
        //   AP = (1/1 + 2/3) / 2 = 5/6
        // Example 2: relevant {3}; ranking 0, 3, ... -> hit at rank 2. AP = 1/2
        // Example 3: relevant {1, 3}; ranking 1, 3 -> AP = 1
        let scores = Matrix::from_rows(&[
            vec![0.3, 0.5, 0.9, 0.1],
            vec![0.9, 0.2, 0.1, 0.8],
            vec![0.0, 0.7, 0.2, 0.6],
        ])
        .unwrap();
        let relevant = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ])
        .unwrap();
        let expected = (5.0 / 6.0 + 0.5 + 1.0) / 3.0;
        assert!((map_at_k(&scores, &relevant, 10).unwrap() - expected).abs() < 1e-15);
        // With k = 1 only the top label counts: AP = 1, 0, 1.
        assert!((map_at_k(&scores, &relevant, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictor_scores() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(map_at_k(&y, &y, 10).unwrap(), 1.0);
        let labels = Targets::Labels(vec![0, 2, 1]);
        let out = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(score(&out, &labels, Metric::Accuracy).unwrap(), 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<usize> = (0..2000).map(|_| rng.random_range(0..2)).collect();
        let out = Matrix::from_fn(2000, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let acc = score(&out, &Targets::Labels(labels), Metric::Accuracy).unwrap();
        assert!((acc - 0.5).abs() < 0.05, "{acc}");
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("map@10".parse::<Metric>().unwrap(), Metric::MapAtK(10));
        assert_eq!("mse".parse::<Metric>().unwrap(), Metric::Mse);
        assert!("map@0".parse::<Metric>().is_err());
        assert!("auc".parse::<Metric>().is_err());
    }

    #[test]
    fn metric_serializes_as_display_form() {
        let json = serde_json::to_string(&Metric::MapAtK(5)).unwrap();
        assert_eq!(json, "\"map@5\"");
        assert_eq!(serde_json::from_str::<Metric>(&json).unwrap(), Metric::MapAtK(5));
        assert!(serde_json::from_str::<Metric>("\"map@0\"").is_err());
    }

    #[test]
    fn empty_scoring_rejected() {
        let out = Matrix::zeros(0, 1);
        assert!(matches!(
            score(&out, &Targets::Real(Matrix::zeros(0, 1)), Metric::Mse),
            Err(TaanError::EmptyDataset(_))
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        for c in [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { beta2: 1.0, ..TrainConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.beta1, c.beta2, c.epsilon), (1e-4, 0.9, 0.98, 1e-8));
    }
}
