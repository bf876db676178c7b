//! Planted-cluster benchmark runs: shared multi-task training with and
//! without a regularizer, and independent single-task baselines.

use serde::{Deserialize, Serialize};

use crate::analysis::{cluster_separation, layer_distances, ClusterSeparation};
use crate::data::{generate, Split, SyntheticSpec, TaskSplits};
use crate::error::{Result, TaanError};
use crate::metrics::build_gram;
use crate::network::{ArchSpec, TaanModel};
use crate::regularizers::RegConfig;
use crate::training::{evaluate, train, train_independent, History, Metric, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub tasks: usize,
    pub clusters: usize,
    pub samples_per_task: usize,
    pub input_dim: usize,
    pub relatedness: f64,
    pub noise: f64,
    pub hidden: Vec<usize>,
    pub basis_count: usize,
    pub train: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            tasks: 8,
            clusters: 2,
            samples_per_task: 1000,
            input_dim: 8,
            relatedness: 0.3,
            // Noise comparable to the signal, so task-specific parameters
            // can overfit and sharing matters.
            noise: 0.5,
            hidden: vec![32, 32],
            basis_count: 32,
            train: TrainConfig {
                learning_rate: 3e-3,
                epochs: 40,
                ..TrainConfig::default()
            },
        }
    }
}

impl BenchmarkConfig {
    pub fn data_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec::planted(
            self.tasks,
            self.clusters,
            self.samples_per_task,
            self.input_dim,
            self.relatedness,
            self.noise,
            seed,
        )
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec::new(self.input_dim, self.hidden.clone(), vec![1; self.tasks], self.basis_count)
    }

    fn train_config(&self, seed: u64, reg: RegConfig) -> TrainConfig {
        TrainConfig {
            seed,
            reg,
            val_metric: Metric::Mse,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Test MSE averaged over tasks.
    pub test_mse: f64,
    /// Mean pairwise activation distance after training, averaged over layers.
    pub final_distance: f64,
    /// Cluster separation at the last adaptive layer.
    pub separation: ClusterSeparation,
    pub history: History,
    pub model: TaanModel,
}

fn mean_test_mse(models: &[(&TaanModel, usize)], data: &[TaskSplits]) -> Result<f64> {
    let mut total = 0.0;
    for (t, (model, head)) in models.iter().enumerate() {
        let test = data[t]
            .get(Split::Test)
            .ok_or_else(|| TaanError::EmptyDataset(format!("task {t} has no test split")))?;
        total += evaluate(model, test, *head, Metric::Mse)?;
    }
    Ok(total / data.len() as f64)
}

/// Trains one multi-task model on the benchmark drawn with `seed`.
pub fn run_multitask(cfg: &BenchmarkConfig, seed: u64, reg: RegConfig) -> Result<RunOutcome> {
    let spec = cfg.data_spec(seed);
    let data = generate(&spec)?;
    run_multitask_on(cfg, &spec, &data, seed, reg)
}

pub fn run_multitask_on(
    cfg: &BenchmarkConfig,
    spec: &SyntheticSpec,
    data: &[TaskSplits],
    seed: u64,
    reg: RegConfig,
) -> Result<RunOutcome> {
    let model = TaanModel::build(cfg.arch(), seed)?;
    let (model, history) = train(model, data, &cfg.train_config(seed, reg))?;
    let heads: Vec<(&TaanModel, usize)> = (0..cfg.tasks).map(|t| (&model, t)).collect();
    let test_mse = mean_test_mse(&heads, data)?;
    let cache = build_gram(model.grid(), model.mixture());
    let reports = layer_distances(&model, &cache)?;
    let last = reports
        .last()
        .ok_or_else(|| TaanError::InvalidArgument("model has no adaptive layer".into()))?;
    let separation = cluster_separation(&last.distances, &spec.clusters)?;
    let final_distance = history
        .last_epoch()
        .and_then(|e| history.mean_distance(e))
        .unwrap_or(0.0);
    Ok(RunOutcome {
        test_mse,
        final_distance,
        separation,
        history,
        model,
    })
}

/// Test MSE of independently trained single-task networks.
pub fn run_single_task_on(cfg: &BenchmarkConfig, data: &[TaskSplits], seed: u64) -> Result<f64> {
    let runs = train_independent(&cfg.arch(), data, &cfg.train_config(seed, RegConfig::none()))?;
    let models: Vec<(&TaanModel, usize)> = runs.iter().map(|(m, _)| (m, 0)).collect();
    mean_test_mse(&models, data)
}
