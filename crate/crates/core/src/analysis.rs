//! Post-hoc inspection of trained models: task distance matrices, heatmap
//! export, cluster recovery and the first-layer expectation bounds.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apl::apl_eval;
use crate::error::{Result, TaanError};
use crate::matrix::{dot, Matrix};
use crate::metrics::{build_gram, distance_matrix, distance_sq, inner_product, GaussianMixture, GramCache};
use crate::moments::GaussianParams;
use crate::network::TaanModel;

/// Task-by-task activation distances at one adaptive layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDistanceReport {
    pub layer: usize,
    pub distances: Matrix,
    pub labels: Vec<String>,
}

pub fn task_labels(task_count: usize) -> Vec<String> {
    (0..task_count).map(|t| format!("task{t}")).collect()
}

/// One report per adaptive layer, in layer order.
pub fn layer_distances(model: &TaanModel, cache: &GramCache) -> Result<Vec<LayerDistanceReport>> {
    let labels = task_labels(model.task_count());
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(layer, l)| {
            Ok(LayerDistanceReport {
                layer,
                distances: distance_matrix(&l.coords, cache)?,
                labels: labels.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    Csv,
    Pgm,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Csv => "csv",
            HeatmapFormat::Pgm => "pgm",
        }
    }
}

/// 8-bit gray levels: the largest entry maps to 255, zero to 0.
pub fn gray_levels(m: &Matrix) -> Vec<u8> {
    let max = m.as_slice().iter().copied().fold(0.0_f64, f64::max);
    m.as_slice()
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (255.0 * v.max(0.0) / max).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn export_heatmap(report: &LayerDistanceReport, path: &Path, format: HeatmapFormat) -> Result<()> {
    let m = &report.distances;
    match format {
        HeatmapFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
            w.write_record(&report.labels).map_err(|e| csv_error(path, e))?;
            for r in 0..m.rows() {
                w.write_record(m.row(r).iter().map(|v| v.to_string()))
                    .map_err(|e| csv_error(path, e))?;
            }
            w.flush().map_err(|e| TaanError::io(path, e))
        }
        HeatmapFormat::Pgm => {
            let mut bytes = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
            bytes.extend(gray_levels(m));
            fs::write(path, bytes).map_err(|e| TaanError::io(path, e))
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> TaanError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TaanError::io(path, io),
        other => TaanError::Serde(format!("{}: {other:?}", path.display())),
    }
}

/// Reads a CSV heatmap back into its labels and matrix.
pub fn load_heatmap_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let labels: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| TaanError::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 2,
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() != labels.len() {
        return Err(TaanError::Shape(format!(
            "{}: {} labels but {} rows",
            path.display(),
            labels.len(),
            rows.len()
        )));
    }
    Ok((labels, Matrix::from_rows(&rows)?))
}

/// Mean distance between tasks in the same cluster versus different ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSeparation {
    pub within: f64,
    pub between: f64,
}

impl ClusterSeparation {
    pub fn recovered(&self) -> bool {
        self.within < self.between
    }
}

/// Off-diagonal means; needs at least one within-cluster and one
/// between-cluster pair.
pub fn cluster_separation(distances: &Matrix, clusters: &[usize]) -> Result<ClusterSeparation> {
    let t = clusters.len();
    if distances.shape() != (t, t) {
        return Err(TaanError::Shape(format!(
            "{:?} distance matrix for {t} tasks",
            distances.shape()
        )));
    }
    let (mut w, mut nw, mut b, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..t {
        for j in 0..t {
            if i == j {
                continue;
            }
            if clusters[i] == clusters[j] {
                w += distances[(i, j)];
                nw += 1;
            } else {
                b += distances[(i, j)];
                nb += 1;
            }
        }
    }
    if nw == 0 || nb == 0 {
        return Err(TaanError::InvalidArgument(
            "cluster assignment needs both within- and between-cluster pairs".into(),
        ));
    }
    Ok(ClusterSeparation {
        within: w / nw as f64,
        between: b / nb as f64,
    })
}

/// Law of every first-layer pre-activation when inputs are standard normal:
/// unit `n` is `N(b_n, |W_n|^2)`.
pub fn standard_input_unit_gaussians(model: &TaanModel) -> Result<Vec<GaussianParams>> {
    let first = &model.layers()[0].linear;
    (0..first.output_dim())
        .map(|n| {
            let w = first.weight.row(n);
            GaussianParams::new(first.bias[n], dot(w, w).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairBound {
    pub t1: usize,
    pub t2: usize,
    /// Monte-Carlo estimate of `E[h^t1 . h^t2]` and its standard error.
    pub inner_mc: f64,
    pub inner_stderr: f64,
    /// `C1 * sum_n <F^t1, F^t2>_n`.
    pub inner_bound: f64,
    /// Monte-Carlo estimate of `E|h^t1 - h^t2|^2` and its standard error.
    pub dist_mc: f64,
    pub dist_stderr: f64,
    /// `C1 * sum_n d_n(F^t1, F^t2)`.
    pub dist_bound: f64,
    pub inner_holds: bool,
    pub dist_holds: bool,
    pub inner_tight: bool,
    pub dist_tight: bool,
}

impl PairBound {
    pub fn holds(&self) -> bool {
        self.inner_holds && self.dist_holds
    }

    pub fn tight(&self) -> bool {
        self.inner_tight && self.dist_tight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckReport {
    pub envelope: f64,
    pub samples: usize,
    pub seed: u64,
    pub pairs: Vec<PairBound>,
}

impl BoundCheckReport {
    pub fn all_hold(&self) -> bool {
        self.pairs.iter().all(PairBound::holds)
    }

    pub fn all_tight(&self) -> bool {
        self.pairs.iter().all(PairBound::tight)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "first-layer bounds  C1={}  N={}  seed={}\n{:>3} {:>3} {:>14} {:>10} {:>14} {:>5} {:>14} {:>10} {:>14} {:>5}\n",
            self.envelope, self.samples, self.seed, "t1", "t2", "E[h.h]", "stderr", "bound", "ok", "E|h-h|^2", "stderr", "bound", "ok"
        );
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{:>3} {:>3} {:>14.8} {:>10.2e} {:>14.8} {:>5} {:>14.8} {:>10.2e} {:>14.8} {:>5}",
                p.t1,
                p.t2,
                p.inner_mc,
                p.inner_stderr,
                p.inner_bound,
                mark(p.inner_holds),
                p.dist_mc,
                p.dist_stderr,
                p.dist_bound,
                mark(p.dist_holds)
            );
        }
        s
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.pairs {
            w.serialize(p).map_err(|e| TaanError::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| TaanError::Serde(e.to_string()))
    }
}

impl fmt::Display for BoundCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "yes"
    } else {
        "NO"
    }
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if o.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return f64::INFINITY;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

const MC_CHUNK: usize = 1 << 14;

/// Compares Monte-Carlo first-layer expectations with the metric-side sums
/// for each task pair. Inputs are drawn from `N(0, I)`; `units` must give the
/// law of every first-layer pre-activation for the bound to be exact.
pub fn check_l1_bounds(
    model: &TaanModel,
    units: &[GaussianParams],
    envelope: f64,
    pairs: &[(usize, usize)],
    samples: usize,
    seed: u64,
) -> Result<BoundCheckReport> {
    if !(envelope.is_finite() && envelope > 0.0) {
        return Err(TaanError::InvalidArgument(format!("envelope must be positive, got {envelope}")));
    }
    if samples < 2 {
        return Err(TaanError::InvalidArgument("at least two Monte-Carlo samples are required".into()));
    }
    let first = &model.layers()[0];
    let width = first.linear.output_dim();
    if units.len() != width {
        return Err(TaanError::Shape(format!("{} unit laws for a width-{width} layer", units.len())));
    }
    let tasks = model.task_count();
    for &(a, b) in pairs {
        for t in [a, b] {
            if t >= tasks {
                return Err(TaanError::UnknownTask { task: t, task_count: tasks });
            }
        }
    }
    let caches: Vec<GramCache> = units
        .iter()
        .map(|&g| build_gram(model.grid(), &GaussianMixture::single(g)))
        .collect();
    let input_dim = model.arch().input_dim;
    let grid = model.grid();
    let coords = &first.coords;
    let chunks = samples.div_ceil(MC_CHUNK);

    pairs
        .iter()
        .enumerate()
        .map(|(pair_id, &(t1, t2))| {
            let (mut inner_bound, mut dist_bound) = (0.0, 0.0);
            for c in &caches {
                inner_bound += inner_product(coords.row(t1), coords.row(t2), c)?;
                dist_bound += distance_sq(coords.row(t1), coords.row(t2), c)?;
            }
            inner_bound *= envelope;
            dist_bound *= envelope;

            let partial: Vec<(Moments, Moments)> = (0..chunks)
                .into_par_iter()
                .map(|chunk| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((pair_id as u64) << 40) | chunk as u64);
                    let n = MC_CHUNK.min(samples - chunk * MC_CHUNK);
                    let mut x = vec![0.0; input_dim];
                    let (mut inner, mut dist) = (Moments::default(), Moments::default());
                    for _ in 0..n {
                        for v in x.iter_mut() {
                            *v = StandardNormal.sample(&mut rng);
                        }
                        let (mut ip, mut dd) = (0.0, 0.0);
                        for u in 0..width {
                            let a = dot(first.linear.weight.row(u), &x) + first.linear.bias[u];
                            let h1 = apl_eval(a, coords.row(t1), grid)?;
                            let h2 = apl_eval(a, coords.row(t2), grid)?;
                            ip += h1 * h2;
                            dd += (h1 - h2) * (h1 - h2);
                        }
                        inner.push(ip);
                        dist.push(dd);
                    }
                    Ok((inner, dist))
                })
                .collect::<Result<_>>()?;
            let (inner, dist) = partial
                .into_iter()
                .fold((Moments::default(), Moments::default()), |(a, b), (c, d)| (a.merge(c), b.merge(d)));

            let (inner_se, dist_se) = (inner.stderr(), dist.stderr());
            Ok(PairBound {
                t1,
                t2,
                inner_mc: inner.mean,
                inner_stderr: inner_se,
                inner_bound,
                dist_mc: dist.mean,
                dist_stderr: dist_se,
                dist_bound,
                inner_holds: inner.mean <= inner_bound + 3.0 * inner_se,
                dist_holds: dist.mean <= dist_bound + 3.0 * dist_se,
                inner_tight: (inner.mean - inner_bound).abs() <= 3.0 * inner_se,
                dist_tight: (dist.mean - dist_bound).abs() <= 3.0 * dist_se,
            })
        })
        .collect::<Result<_>>()
        .map(|pairs| BoundCheckReport {
            envelope,
            samples,
            seed,
            pairs,
        })
}
