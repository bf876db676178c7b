//! Function-space metrics between APL activations.
//!
//! Each activation is weighted by a Gaussian mixture `G`, which makes the
//! otherwise divergent L2 integrals finite. Because every activation is
//! `B0 + sum_i alpha_i B_{b_i}`, all metrics reduce to quadratic forms in
//! the coordinates once three quantities are known:
//!
//! * `s = E_G[B0^2]`
//! * `v_i = E_G[B0 B_{b_i}]`
//! * `G_ij = E_G[B_{b_i} B_{b_j}]`
//!
//! These are collected in a [`GramCache`], built once per (grid, mixture).

use serde::{Deserialize, Serialize};

use crate::apl::{AplCoordinates, BasisGrid};
use crate::error::{Result, TaanError};
use crate::matrix::{dot, Matrix};
use crate::moments::{moment_b0_sq, moment_b0b, moment_bb, GaussianParams};

/// Norms at or below this are treated as a degenerate (vanishing) function.
pub const DEGENERATE_NORM_EPS: f64 = 1e-12;

const MIXTURE_WEIGHT_TOL: f64 = 1e-12;
const NEGATIVE_SELF_PRODUCT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Weighting measure `sum_k pi_k N(mu_k, sigma_k^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MixtureComponent>", into = "Vec<MixtureComponent>")]
pub struct GaussianMixture {
    components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(TaanError::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        for c in &components {
            GaussianParams::new(c.mu, c.sigma)?;
            if !c.weight.is_finite() || c.weight < 0.0 {
                return Err(TaanError::InvalidArgument(format!(
                    "mixture weight {} must be finite and non-negative",
                    c.weight
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > MIXTURE_WEIGHT_TOL {
            return Err(TaanError::InvalidArgument(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(GaussianMixture { components })
    }

    /// The single standard normal; the default weighting measure.
    pub fn standard_normal() -> Self {
        GaussianMixture::single(GaussianParams::standard())
    }

    pub fn single(g: GaussianParams) -> Self {
        GaussianMixture {
            components: vec![MixtureComponent {
                weight: 1.0,
                mu: g.mu(),
                sigma: g.sigma(),
            }],
        }
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    fn weighted_params(&self) -> impl Iterator<Item = (f64, GaussianParams)> + '_ {
        self.components.iter().map(|c| {
            (
                c.weight,
                GaussianParams::new(c.mu, c.sigma).expect("validated component"),
            )
        })
    }
}

impl Default for GaussianMixture {
    fn default() -> Self {
        GaussianMixture::standard_normal()
    }
}

impl TryFrom<Vec<MixtureComponent>> for GaussianMixture {
    type Error = TaanError;

    fn try_from(v: Vec<MixtureComponent>) -> Result<Self> {
        GaussianMixture::new(v)
    }
}

impl From<GaussianMixture> for Vec<MixtureComponent> {
    fn from(m: GaussianMixture) -> Self {
        m.components
    }
}

/// Mixture-weighted basis moments for one (grid, mixture) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GramCache {
    s: f64,
    v: Vec<f64>,
    gram: Matrix,
}

impl GramCache {
    pub fn relu_moment(&self) -> f64 {
        self.s
    }

    pub fn relu_cross(&self) -> &[f64] {
        &self.v
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn basis_count(&self) -> usize {
        self.v.len()
    }

    /// `G c`.
    pub fn gram_times(&self, c: &[f64]) -> Vec<f64> {
        (0..self.v.len()).map(|i| dot(self.gram.row(i), c)).collect()
    }

    fn check(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.v.len() {
            return Err(TaanError::Shape(format!(
                "coordinate vector of length {} against a {}-basis Gram cache",
                c.len(),
                self.v.len()
            )));
        }
        Ok(())
    }

    /// `c1^T G c2` without shape checks.
    fn bilinear(&self, c1: &[f64], c2: &[f64]) -> f64 {
        c1.iter()
            .enumerate()
            .map(|(i, &a)| a * dot(self.gram.row(i), c2))
            .sum()
    }

    pub(crate) fn inner_unchecked(&self, c1: &[f64], c2: &[f64]) -> f64 {
        let cross: f64 = c1
            .iter()
            .zip(c2)
            .zip(&self.v)
            .map(|((a, b), v)| (a + b) * v)
            .sum();
        self.s + cross + self.bilinear(c1, c2)
    }

    pub(crate) fn distance_unchecked(&self, c1: &[f64], c2: &[f64]) -> f64 {
        let d: Vec<f64> = c1.iter().zip(c2).map(|(a, b)| a - b).collect();
        self.bilinear(&d, &d).max(0.0)
    }
}

/// Builds the Gram cache from the closed-form moments.
pub fn build_gram(grid: &BasisGrid, mix: &GaussianMixture) -> GramCache {
    let m = grid.len();
    let bps: Vec<_> = grid.iter().collect();
    let mut s = 0.0;
    let mut v = vec![0.0; m];
    let mut gram = Matrix::zeros(m, m);
    for (w, g) in mix.weighted_params() {
        s += w * moment_b0_sq(g);
        for (i, &bi) in bps.iter().enumerate() {
            v[i] += w * moment_b0b(bi, g);
            for j in i..m {
                let e = w * moment_bb(bi, bps[j], g);
                gram[(i, j)] += e;
                if j != i {
                    gram[(j, i)] += e;
                }
            }
        }
    }
    GramCache { s, v, gram }
}

/// `<F1, F2>_G = s + (c1 + c2)^T v + c1^T G c2`.
pub fn inner_product(c1: &[f64], c2: &[f64], cache: &GramCache) -> Result<f64> {
    cache.check(c1)?;
    cache.check(c2)?;
    Ok(cache.inner_unchecked(c1, c2))
}

/// `E_G[(F1 - F2)^2] = (c1 - c2)^T G (c1 - c2)`. The ReLU and cross terms
/// cancel in the difference.
pub fn distance_sq(c1: &[f64], c2: &[f64], cache: &GramCache) -> Result<f64> {
    cache.check(c1)?;
    cache.check(c2)?;
    Ok(cache.distance_unchecked(c1, c2))
}

pub fn norm(c: &[f64], cache: &GramCache) -> Result<f64> {
    let p = inner_product(c, c, cache)?;
    if p < -NEGATIVE_SELF_PRODUCT_TOL {
        return Err(TaanError::Numeric(format!(
            "self inner product {p:e} is negative; the Gram cache is broken"
        )));
    }
    Ok(p.max(0.0).sqrt())
}

pub fn cosine_similarity(c1: &[f64], c2: &[f64], cache: &GramCache) -> Result<f64> {
    let n1 = norm(c1, cache)?;
    let n2 = norm(c2, cache)?;
    for n in [n1, n2] {
        if n <= DEGENERATE_NORM_EPS {
            return Err(TaanError::DegenerateFunction {
                norm: n,
                eps: DEGENERATE_NORM_EPS,
            });
        }
    }
    let c = cache.inner_unchecked(c1, c2) / (n1 * n2);
    Ok(c.clamp(-1.0, 1.0))
}

/// Pairwise squared distances between the task rows of one layer.
pub fn distance_matrix(alpha: &AplCoordinates, cache: &GramCache) -> Result<Matrix> {
    cache.check(alpha.row(0))?;
    let t = alpha.task_count();
    let mut out = Matrix::zeros(t, t);
    for i in 0..t {
        for j in (i + 1)..t {
            let d = cache.distance_unchecked(alpha.row(i), alpha.row(j));
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

/// Mean of `distance_sq` over the ordered off-diagonal pairs; zero for a
/// single task.
pub fn mean_pairwise_distance(alpha: &AplCoordinates, cache: &GramCache) -> Result<f64> {
    let t = alpha.task_count();
    if t < 2 {
        return Ok(0.0);
    }
    let d = distance_matrix(alpha, cache)?;
    Ok(d.as_slice().iter().sum::<f64>() / (t * (t - 1)) as f64)
}
