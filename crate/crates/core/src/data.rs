//! Multi-task datasets: a synthetic generator with planted task clusters
//! and CSV ingestion.
//!
//! Synthetic task `t` in cluster `c` has target
//! `y = (1 - delta) g_c(x) + delta h_t(x) + noise * eps` where `g_c` and
//! `h_t` are fixed random two-layer maps with cosine units and `x ~ N(0, I)`.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaanError};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Regression values or multi-hot label indicators, `rows x k`.
    Real(Matrix),
    /// Class index per row.
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(m) => m.rows(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Real(m) => Targets::Real(select_rows(m, idx)),
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task: usize,
    pub split: Split,
    pub inputs: Matrix,
    pub targets: Targets,
}

impl TaskDataset {
    pub fn new(task: usize, split: Split, inputs: Matrix, targets: Targets) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(TaanError::Shape(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        if !inputs.is_finite() {
            return Err(TaanError::InvalidArgument("inputs contain non-finite values".into()));
        }
        if let Targets::Real(m) = &targets {
            if !m.is_finite() {
                return Err(TaanError::InvalidArgument("targets contain non-finite values".into()));
            }
        }
        Ok(TaskDataset {
            task,
            split,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` of this dataset, in the given order.
    pub fn subset(&self, idx: &[usize]) -> TaskDataset {
        TaskDataset {
            task: self.task,
            split: self.split,
            inputs: select_rows(&self.inputs, idx),
            targets: self.targets.select(idx),
        }
    }

    pub fn real_targets(&self) -> Option<&Matrix> {
        match &self.targets {
            Targets::Real(m) => Some(m),
            Targets::Labels(_) => None,
        }
    }
}

/// Train/validation/test data of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplits {
    pub train: TaskDataset,
    pub val: Option<TaskDataset>,
    pub test: Option<TaskDataset>,
}

impl TaskSplits {
    pub fn get(&self, split: Split) -> Option<&TaskDataset> {
        match split {
            Split::Train => Some(&self.train),
            Split::Val => self.val.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }
}

pub(crate) fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(idx.len() * m.cols());
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), m.cols(), data).expect("row selection keeps shape")
}

/// Parameters of the planted-cluster regression benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Cluster of each task; its length is the task count.
    pub clusters: Vec<usize>,
    pub samples_per_task: usize,
    pub input_dim: usize,
    #[serde(default = "one")]
    pub output_dim: usize,
    /// 0 gives identical tasks within a cluster, 1 gives unrelated tasks.
    pub relatedness: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_map_hidden")]
    pub map_hidden: usize,
    /// Train and validation fractions; the remainder is the test split.
    #[serde(default = "default_fractions")]
    pub split_fractions: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_map_hidden() -> usize {
    16
}

fn default_fractions() -> (f64, f64) {
    (0.6, 0.2)
}

impl SyntheticSpec {
    /// `task_count` tasks split into `cluster_count` contiguous blocks.
    pub fn planted(task_count: usize, cluster_count: usize, samples_per_task: usize, input_dim: usize, relatedness: f64, noise: f64, seed: u64) -> Self {
        let k = cluster_count.max(1);
        SyntheticSpec {
            clusters: (0..task_count).map(|t| t * k / task_count.max(1)).collect(),
            samples_per_task,
            input_dim,
            output_dim: 1,
            relatedness,
            noise,
            map_hidden: default_map_hidden(),
            split_fractions: default_fractions(),
            seed,
        }
    }

    pub fn task_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.iter().max().map_or(0, |c| c + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TaanError::InvalidArgument(m));
        if self.clusters.is_empty() {
            return bad("at least one task is required".into());
        }
        if !(0.0..=1.0).contains(&self.relatedness) {
            return bad(format!("relatedness must lie in [0, 1], got {}", self.relatedness));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if self.samples_per_task == 0 || self.input_dim == 0 || self.output_dim == 0 || self.map_hidden == 0 {
            return bad("sample count and dimensions must be positive".into());
        }
        let (tr, va) = self.split_fractions;
        if !(tr > 0.0 && va >= 0.0 && tr + va <= 1.0) {
            return bad(format!("invalid split fractions ({tr}, {va})"));
        }
        Ok(())
    }
}

/// `x -> W2 cos(W1 x + b1)` with uniform phases `b1`.
#[derive(Debug, Clone)]
struct RandomMap {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
}

impl RandomMap {
    fn sample(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let s1 = 2.0 / (input as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let w1 = Matrix::from_fn(hidden, input, |_, _| s1 * rng.sample::<f64, _>(StandardNormal));
        let b1 = (0..hidden).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let w2 = Matrix::from_fn(output, hidden, |_, _| s2 * rng.sample::<f64, _>(StandardNormal));
        RandomMap { w1, b1, w2 }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let hidden: Vec<f64> = (0..self.w1.rows())
            .map(|i| (dot(self.w1.row(i), x) + self.b1[i]).cos())
            .collect();
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(self.w2.row(k), &hidden);
        }
    }
}

// Stream ids that keep the generator's random draws independent.
const STREAM_CLUSTER: u64 = 1 << 32;
const STREAM_TASK: u64 = 2 << 32;
const STREAM_SAMPLES: u64 = 3 << 32;
const STREAM_SPLIT: u64 = 4 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Noise-free target function of every task, for inspection and tests.
pub struct TaskFunctions {
    cluster_maps: Vec<RandomMap>,
    task_maps: Vec<RandomMap>,
    clusters: Vec<usize>,
    relatedness: f64,
    output_dim: usize,
}

impl TaskFunctions {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let cluster_maps = (0..spec.cluster_count())
            .map(|c| {
                RandomMap::sample(spec.input_dim, spec.map_hidden, spec.output_dim, &mut stream(spec.seed, STREAM_CLUSTER + c as u64))
            })
            .collect();
        let task_maps = (0..spec.task_count())
            .map(|t| {
                RandomMap::sample(spec.input_dim, spec.map_hidden, spec.output_dim, &mut stream(spec.seed, STREAM_TASK + t as u64))
            })
            .collect();
        Ok(TaskFunctions {
            cluster_maps,
            task_maps,
            clusters: spec.clusters.clone(),
            relatedness: spec.relatedness,
            output_dim: spec.output_dim,
        })
    }

    /// Noise-free target of `task` at `x`.
    pub fn eval(&self, task: usize, x: &[f64]) -> Vec<f64> {
        let mut shared = vec![0.0; self.output_dim];
        let mut own = vec![0.0; self.output_dim];
        self.cluster_maps[self.clusters[task]].eval(x, &mut shared);
        self.task_maps[task].eval(x, &mut own);
        let d = self.relatedness;
        shared
            .iter()
            .zip(&own)
            .map(|(g, h)| (1.0 - d) * g + d * h)
            .collect()
    }
}

/// Generates every task's train/val/test splits.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<TaskSplits>> {
    let funcs = TaskFunctions::new(spec)?;
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE))
        .map_err(|e| TaanError::InvalidArgument(e.to_string()))?;
    let n = spec.samples_per_task;
    let mut out = Vec::with_capacity(spec.task_count());
    for t in 0..spec.task_count() {
        let mut rng = stream(spec.seed, STREAM_SAMPLES + t as u64);
        let inputs = Matrix::from_fn(n, spec.input_dim, |_, _| StandardNormal.sample(&mut rng));
        let mut targets = Matrix::zeros(n, spec.output_dim);
        for r in 0..n {
            let y = funcs.eval(t, inputs.row(r));
            for (dst, v) in targets.row_mut(r).iter_mut().zip(y) {
                let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                *dst = v + eps;
            }
        }
        let full = TaskDataset::new(t, Split::Train, inputs, Targets::Real(targets))?;
        let parts = split_indices(n, spec.split_fractions, &mut stream(spec.seed, STREAM_SPLIT + t as u64));
        let make = |split: Split, idx: &[usize]| {
            let mut d = full.subset(idx);
            d.split = split;
            d
        };
        let val = (!parts[1].is_empty()).then(|| make(Split::Val, &parts[1]));
        let test = (!parts[2].is_empty()).then(|| make(Split::Test, &parts[2]));
        out.push(TaskSplits {
            train: make(Split::Train, &parts[0]),
            val,
            test,
        });
    }
    Ok(out)
}

/// Random partition of `0..n` into train/val/test index sets.
pub fn split_indices(n: usize, (train, val): (f64, f64), rng: &mut impl Rng) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates, explicit so the permutation is stable across rand versions.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = ((n as f64) * train).round() as usize;
    let n_val = (((n as f64) * val).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    [idx, val, test]
}

/// Column layout of a task CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub input_dim: usize,
    pub target_dim: usize,
    /// When set, the single target column holds class indices.
    #[serde(default)]
    pub class_labels: bool,
}

impl CsvSchema {
    pub fn real(input_dim: usize, target_dim: usize) -> Self {
        CsvSchema {
            input_dim,
            target_dim,
            class_labels: false,
        }
    }

    pub fn header(&self) -> Vec<String> {
        (0..self.input_dim)
            .map(|i| format!("x{i}"))
            .chain((0..self.target_dim).map(|k| format!("y{k}")))
            .collect()
    }
}

/// Reads a task CSV (`x0..x{d-1}, y0..y{k-1}` header) and validates it.
pub fn load_csv(path: &Path, schema: &CsvSchema, task: usize, split: Split) -> Result<TaskDataset> {
    let parse_err = |line: u64, message: String| TaanError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if schema.class_labels && schema.target_dim != 1 {
        return Err(TaanError::Config("class-label files have exactly one target column".into()));
    }
    let file = std::fs::File::open(path).map_err(|e| TaanError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(TaanError::EmptyDataset(format!("{} has no header or rows", path.display())));
    }
    let expected = schema.header();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            1,
            format!("header {:?} does not match expected {:?}", headers.iter().collect::<Vec<_>>(), expected),
        ));
    }

    let d = schema.input_dim;
    let mut inputs = Vec::new();
    let mut reals = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(parse_err(line, format!("{} fields, expected {}", record.len(), expected.len())));
        }
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if schema.class_labels && col == d {
                let label: usize = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("column {}: {field:?} is not a class index", expected[col])))?;
                labels.push(label);
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: {field:?} is not a number", expected[col])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value {field:?}", expected[col])));
            }
            if col < d {
                inputs.push(v);
            } else {
                reals.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(TaanError::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    let inputs = Matrix::from_vec(rows, d, inputs)?;
    let targets = if schema.class_labels {
        Targets::Labels(labels)
    } else {
        Targets::Real(Matrix::from_vec(rows, schema.target_dim, reals)?)
    };
    TaskDataset::new(task, split, inputs, targets)
}

/// Writes a dataset in the CSV layout [`load_csv`] reads. Values are written
/// in shortest round-trip form, so output is byte-stable.
pub fn write_csv(dataset: &TaskDataset, path: &Path) -> Result<()> {
    let target_dim = match &dataset.targets {
        Targets::Real(m) => m.cols(),
        Targets::Labels(_) => 1,
    };
    let schema = CsvSchema {
        input_dim: dataset.inputs.cols(),
        target_dim,
        class_labels: matches!(dataset.targets, Targets::Labels(_)),
    };
    let io_err = |e: csv::Error| TaanError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(schema.header()).map_err(io_err)?;
    for r in 0..dataset.len() {
        let mut fields: Vec<String> = dataset.inputs.row(r).iter().map(|v| v.to_string()).collect();
        match &dataset.targets {
            Targets::Real(m) => fields.extend(m.row(r).iter().map(|v| v.to_string())),
            Targets::Labels(l) => fields.push(l[r].to_string()),
        }
        w.write_record(&fields).map_err(io_err)?;
    }
    w.flush().map_err(|e| TaanError::io(path, e))
}

/// Pearson correlation of two equal-length series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn spec(relatedness: f64, noise: f64) -> SyntheticSpec {
        SyntheticSpec::planted(4, 2, 200, 5, relatedness, noise, 42)
    }

    #[test]
    fn planted_assignment_is_contiguous() {
        let s = SyntheticSpec::planted(8, 2, 10, 3, 0.3, 0.1, 0);
        assert_eq!(s.clusters, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(s.cluster_count(), 2);
    }

    #[test]
    fn identical_tasks_when_unrelatedness_is_zero() {
        let s = spec(0.0, 0.0);
        let f = TaskFunctions::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
            assert_eq!(f.eval(0, &x), f.eval(1, &x));
            assert_ne!(f.eval(0, &x), f.eval(2, &x));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec(0.3, 0.1)).unwrap();
        let b = generate(&spec(0.3, 0.1)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(0.3, 0.1);
        other.seed = 43;
        assert_ne!(a, generate(&other).unwrap());
    }

    #[test]
    fn unrelated_tasks_are_uncorrelated() {
        let s = SyntheticSpec::planted(2, 1, 1000, 8, 1.0, 0.0, 5);
        let f = TaskFunctions::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..1000 {
            let x: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            a.push(f.eval(0, &x)[0]);
            b.push(f.eval(1, &x)[0]);
        }
        let c = correlation(&a, &b);
        assert!(c.abs() < 0.2, "corr = {c}");
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&spec(1.5, 0.0)).is_err());
        assert!(generate(&spec(-0.1, 0.0)).is_err());
        assert!(generate(&spec(0.5, -1.0)).is_err());
        let mut s = spec(0.5, 0.0);
        s.clusters.clear();
        assert!(generate(&s).is_err());
    }

    #[test]
    fn split_sizes_and_tags() {
        let data = generate(&spec(0.3, 0.1)).unwrap();
        for (t, d) in data.iter().enumerate() {
            assert_eq!(d.train.len(), 120);
            assert_eq!(d.val.as_ref().unwrap().len(), 40);
            assert_eq!(d.test.as_ref().unwrap().len(), 40);
            assert_eq!(d.train.task, t);
            assert_eq!(d.val.as_ref().unwrap().split, Split::Val);
        }
    }

    proptest! {
        #[test]
        fn splits_partition_indices(n in 0usize..300, tr in 0.05f64..0.9, seed in any::<u64>()) {
            let va = (1.0 - tr) / 2.0;
            let [a, b, c] = split_indices(n, (tr, va), &mut ChaCha8Rng::seed_from_u64(seed));
            let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
