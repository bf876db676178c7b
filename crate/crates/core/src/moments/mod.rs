//! Second moments of the piecewise-linear basis functions under a Gaussian.
//!
//! With `B0(x) = max(0, x)` and `Bb(x) = max(0, b - x)`, this module gives
//! closed forms for `E[B0^2]`, `E[B0 Bb]` and `E[Bbi Bbj]` when
//! `X ~ N(mu, sigma^2)`. [`quadrature`] evaluates the same integrals
//! numerically and serves as the reference they are checked against.

pub mod quadrature;

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, TaanError};

pub use quadrature::{oracle_moment, MomentIntegrand, QuadratureReport};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Mean and standard deviation of a univariate Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    mu: f64,
    sigma: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        ensure_finite("mu", mu)?;
        ensure_finite("sigma", sigma)?;
        if sigma <= 0.0 {
            return Err(TaanError::InvalidArgument(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(GaussianParams { mu, sigma })
    }

    pub fn standard() -> Self {
        GaussianParams { mu: 0.0, sigma: 1.0 }
    }

    #[inline]
    pub fn mu(&self) -> f64 {
        self.mu
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn pdf(&self, x: f64) -> f64 {
        std_normal_pdf((x - self.mu) / self.sigma) / self.sigma
    }
}

/// Hinge location `b` of the basis `Bb(x) = max(0, b - x)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Breakpoint(f64);

impl Breakpoint {
    pub fn new(b: f64) -> Result<Self> {
        ensure_finite("breakpoint", b)?;
        Ok(Breakpoint(b))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, evaluated through `erfc` so both tails keep full
/// relative precision.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `Phi(hi) - Phi(lo)` for `lo <= hi`, taken from whichever tail is accurate.
fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        std_normal_sf(lo) - std_normal_sf(hi)
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    }
}

/// `E[max(0, X)^2]`.
pub fn moment_b0_sq(g: GaussianParams) -> f64 {
    let (mu, sigma) = (g.mu, g.sigma);
    let z = mu / sigma;
    let value = (mu * mu + sigma * sigma) * std_normal_cdf(z) + mu * sigma * std_normal_pdf(z);
    value.max(0.0)
}

/// `E[max(0, bi - X) max(0, bj - X)]`; symmetric in the two breakpoints.
pub fn moment_bb(bi: Breakpoint, bj: Breakpoint, g: GaussianParams) -> f64 {
    let (mu, sigma) = (g.mu, g.sigma);
    // Order the pair so the result is bitwise symmetric.
    let (lo, hi) = if bi.0 <= bj.0 { (bi.0, bj.0) } else { (bj.0, bi.0) };
    let z = (lo - mu) / sigma;
    let poly = mu * mu + sigma * sigma + lo * hi - (lo + hi) * mu;
    let value = poly * std_normal_cdf(z) + (hi - mu) * sigma * std_normal_pdf(z);
    value.max(0.0)
}

/// `E[max(0, X) max(0, b - X)]`; zero whenever `b <= 0`.
///
/// The last exponential term carries `(b - mu)`; see the module tests for
/// the quadrature comparison that pins this.
pub fn moment_b0b(b: Breakpoint, g: GaussianParams) -> f64 {
    let b = b.0;
    if b <= 0.0 {
        return 0.0;
    }
    let (mu, sigma) = (g.mu, g.sigma);
    let z0 = -mu / sigma;
    let zb = (b - mu) / sigma;
    let value = (b * mu - mu * mu - sigma * sigma) * std_normal_mass(z0, zb)
        + sigma * mu * std_normal_pdf(zb)
        + sigma * (b - mu) * std_normal_pdf(z0);
    value.max(0.0)
}

/// Validating front end for callers holding raw reals.
pub fn moment_bb_checked(bi: f64, bj: f64, mu: f64, sigma: f64) -> Result<f64> {
    Ok(moment_bb(
        Breakpoint::new(bi)?,
        Breakpoint::new(bj)?,
        GaussianParams::new(mu, sigma)?,
    ))
}
