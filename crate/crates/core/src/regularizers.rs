//! Penalties on a layer's coordinate matrix that pull task activations
//! together, and the composite multi-task loss.
//!
//! * trace norm: sum of singular values of `alpha` (low-rank prior)
//! * cosine: `-(1/T^2) sum_ij C_ij` over function-space cosine similarities
//! * distance: `(1/T^2) sum_ij d(F_i, F_j)` over function-space distances
//!
//! Both pairwise sums include the diagonal. Those terms are constant and do
//! not contribute to gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::apl::AplCoordinates;
use crate::error::{Result, TaanError};
use crate::matrix::Matrix;
use crate::metrics::{cosine_similarity, GramCache, DEGENERATE_NORM_EPS};

/// Singular values at or below this are dropped from the subgradient.
pub const SINGULAR_VALUE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RegularizerKind {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "trace")]
    TraceNorm,
    #[serde(rename = "cos")]
    Cosine,
    #[serde(rename = "dis")]
    Distance,
}

impl RegularizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::TraceNorm => "trace",
            RegularizerKind::Cosine => "cos",
            RegularizerKind::Distance => "dis",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegularizerKind {
    type Err = TaanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegularizerKind::None),
            "trace" => Ok(RegularizerKind::TraceNorm),
            "cos" => Ok(RegularizerKind::Cosine),
            "dis" => Ok(RegularizerKind::Distance),
            other => Err(TaanError::InvalidArgument(format!(
                "unknown regularizer {other:?} (expected none, trace, cos or dis)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegConfig")]
pub struct RegConfig {
    pub kind: RegularizerKind,
    pub coefficient: f64,
}

#[derive(Deserialize)]
struct RawRegConfig {
    #[serde(default)]
    kind: RegularizerKind,
    #[serde(default)]
    coefficient: f64,
}

impl TryFrom<RawRegConfig> for RegConfig {
    type Error = TaanError;

    fn try_from(r: RawRegConfig) -> Result<Self> {
        RegConfig::new(r.kind, r.coefficient)
    }
}

impl RegConfig {
    pub fn new(kind: RegularizerKind, coefficient: f64) -> Result<Self> {
        if !coefficient.is_finite() || coefficient < 0.0 {
            return Err(TaanError::InvalidArgument(format!(
                "regularization coefficient must be finite and >= 0, got {coefficient}"
            )));
        }
        Ok(RegConfig { kind, coefficient })
    }

    pub fn none() -> Self {
        RegConfig {
            kind: RegularizerKind::None,
            coefficient: 0.0,
        }
    }

    /// True when the penalty contributes nothing to the loss.
    pub fn is_inactive(&self) -> bool {
        self.kind == RegularizerKind::None || self.coefficient == 0.0
    }
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig::none()
    }
}

fn svd(alpha: &Matrix) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let m = alpha.to_nalgebra();
    nalgebra::SVD::try_new(m, true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| TaanError::Numeric(format!(
            "SVD of a {}x{} matrix did not converge",
            alpha.rows(),
            alpha.cols()
        )))
}

/// Nuclear norm: the sum of singular values.
pub fn trace_norm(alpha: &Matrix) -> Result<f64> {
    if !alpha.is_finite() {
        return Err(TaanError::InvalidArgument("matrix has non-finite entries".into()));
    }
    let m = alpha.to_nalgebra();
    let sv = nalgebra::SVD::try_new(m, false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| TaanError::Numeric("SVD did not converge".into()))?
        .singular_values;
    Ok(sv.iter().sum())
}

/// Subgradient `U V^T` of the nuclear norm over the singular directions
/// with singular value above [`SINGULAR_VALUE_CUTOFF`].
pub fn trace_norm_grad(alpha: &Matrix) -> Result<Matrix> {
    if !alpha.is_finite() {
        return Err(TaanError::InvalidArgument("matrix has non-finite entries".into()));
    }
    let dec = svd(alpha)?;
    let u = dec.u.as_ref().expect("requested U");
    let vt = dec.v_t.as_ref().expect("requested V^T");
    let mut grad = Matrix::zeros(alpha.rows(), alpha.cols());
    for (k, &s) in dec.singular_values.iter().enumerate() {
        if s <= SINGULAR_VALUE_CUTOFF {
            continue;
        }
        for i in 0..alpha.rows() {
            let uik = u[(i, k)];
            for j in 0..alpha.cols() {
                grad[(i, j)] += uik * vt[(k, j)];
            }
        }
    }
    Ok(grad)
}

fn check_cache(alpha: &AplCoordinates, cache: &GramCache) -> Result<()> {
    if alpha.basis_count() != cache.basis_count() {
        return Err(TaanError::Shape(format!(
            "{} coordinates per task against a {}-basis Gram cache",
            alpha.basis_count(),
            cache.basis_count()
        )));
    }
    Ok(())
}

/// `-(1/T^2) sum_ij cos(F_i, F_j)`.
pub fn cosine_reg(alpha: &AplCoordinates, cache: &GramCache) -> Result<f64> {
    check_cache(alpha, cache)?;
    let t = alpha.task_count();
    let mut total = 0.0;
    for i in 0..t {
        total += 1.0;
        for j in (i + 1)..t {
            total += 2.0 * cosine_similarity(alpha.row(i), alpha.row(j), cache)?;
        }
    }
    // Diagonal terms still require non-degenerate norms.
    if t == 1 {
        cosine_similarity(alpha.row(0), alpha.row(0), cache)?;
    }
    Ok(-total / (t * t) as f64)
}

/// `(1/T^2) sum_ij d(F_i, F_j)` where `d` is the weighted squared L2
/// distance between the two activations.
pub fn distance_reg(alpha: &AplCoordinates, cache: &GramCache) -> Result<f64> {
    check_cache(alpha, cache)?;
    let t = alpha.task_count();
    let mut total = 0.0;
    for i in 0..t {
        for j in (i + 1)..t {
            total += 2.0 * cache.distance_unchecked(alpha.row(i), alpha.row(j));
        }
    }
    Ok(total / (t * t) as f64)
}

pub fn reg_value(kind: RegularizerKind, alpha: &AplCoordinates, cache: &GramCache) -> Result<f64> {
    match kind {
        RegularizerKind::None => Ok(0.0),
        RegularizerKind::TraceNorm => trace_norm(alpha.matrix()),
        RegularizerKind::Cosine => cosine_reg(alpha, cache),
        RegularizerKind::Distance => distance_reg(alpha, cache),
    }
}

fn distance_reg_grad(alpha: &AplCoordinates, cache: &GramCache) -> Matrix {
    let (t, m) = (alpha.task_count(), alpha.basis_count());
    let scale = 4.0 / (t * t) as f64;
    let mut grad = Matrix::zeros(t, m);
    // sum_j G (a_k - a_j) = G (T a_k - sum_j a_j)
    let mut row_sum = vec![0.0; m];
    for j in 0..t {
        for (s, a) in row_sum.iter_mut().zip(alpha.row(j)) {
            *s += a;
        }
    }
    for k in 0..t {
        let diff: Vec<f64> = alpha
            .row(k)
            .iter()
            .zip(&row_sum)
            .map(|(a, s)| t as f64 * a - s)
            .collect();
        let g = cache.gram_times(&diff);
        for (out, gi) in grad.row_mut(k).iter_mut().zip(g) {
            *out = scale * gi;
        }
    }
    grad
}

fn cosine_reg_grad(alpha: &AplCoordinates, cache: &GramCache) -> Result<Matrix> {
    let (t, m) = (alpha.task_count(), alpha.basis_count());
    let v = cache.relu_cross();
    // d<F_i, F_j>/d a_i = v + G a_j
    let g_rows: Vec<Vec<f64>> = (0..t).map(|i| cache.gram_times(alpha.row(i))).collect();
    let norms: Vec<f64> = (0..t)
        .map(|i| {
            let p = cache.inner_unchecked(alpha.row(i), alpha.row(i));
            let n = p.max(0.0).sqrt();
            if n <= DEGENERATE_NORM_EPS {
                Err(TaanError::DegenerateFunction {
                    norm: n,
                    eps: DEGENERATE_NORM_EPS,
                })
            } else {
                Ok(n)
            }
        })
        .collect::<Result<_>>()?;
    let scale = -2.0 / (t * t) as f64;
    let mut grad = Matrix::zeros(t, m);
    for k in 0..t {
        let nk = norms[k];
        let out = grad.row_mut(k);
        for j in 0..t {
            if j == k {
                continue;
            }
            let nj = norms[j];
            let p = cache.inner_unchecked(alpha.row(k), alpha.row(j));
            let c = p / (nk * nj);
            for i in 0..m {
                let d_inner = v[i] + g_rows[j][i];
                let d_norm_k = (v[i] + g_rows[k][i]) / nk;
                out[i] += scale * (d_inner / (nk * nj) - c * d_norm_k / nk);
            }
        }
    }
    Ok(grad)
}

/// Gradient of the selected penalty with respect to the coordinate matrix.
pub fn reg_grad(kind: RegularizerKind, alpha: &AplCoordinates, cache: &GramCache) -> Result<Matrix> {
    match kind {
        RegularizerKind::None => Ok(Matrix::zeros(alpha.task_count(), alpha.basis_count())),
        RegularizerKind::TraceNorm => trace_norm_grad(alpha.matrix()),
        RegularizerKind::Cosine => {
            check_cache(alpha, cache)?;
            cosine_reg_grad(alpha, cache)
        }
        RegularizerKind::Distance => {
            check_cache(alpha, cache)?;
            Ok(distance_reg_grad(alpha, cache))
        }
    }
}

/// `sum_t L_t + c sum_l L_MTL(alpha_l)`.
pub fn total_loss(
    task_losses: &[f64],
    per_layer_alphas: &[&AplCoordinates],
    config: &RegConfig,
    cache: &GramCache,
) -> Result<f64> {
    let task_count = per_layer_alphas.first().map(|a| a.task_count());
    if let Some(t) = task_count {
        if task_losses.len() != t || per_layer_alphas.iter().any(|a| a.task_count() != t) {
            return Err(TaanError::Shape(format!(
                "{} task losses against coordinate matrices with {t} rows",
                task_losses.len()
            )));
        }
    }
    let data: f64 = task_losses.iter().sum();
    if config.is_inactive() {
        return Ok(data);
    }
    let mut reg = 0.0;
    for alpha in per_layer_alphas {
        reg += reg_value(config.kind, alpha, cache)?;
    }
    Ok(data + config.coefficient * reg)
}
