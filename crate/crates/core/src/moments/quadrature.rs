//! Adaptive Gauss-Kronrod (G7/K15) quadrature of basis-pair products
//! weighted by a Gaussian density.
//!
//! The integration window is `[mu - 12 sigma, mu + 12 sigma]`, pre-split at
//! every hinge (`0`, `b`, `bi`, `bj`) inside it so each panel integrates a
//! smooth polynomial-times-Gaussian.

use std::collections::BinaryHeap;

use crate::error::{Result, TaanError};

use super::GaussianParams;

const WINDOW_SIGMAS: f64 = 12.0;
const ABS_TOL: f64 = 1e-12;
const MAX_PANELS: usize = 4000;

// Kronrod nodes on [-1, 1] (non-negative half), K15 and embedded G7 weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
// G7 weights for nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Which of the three basis products to integrate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentIntegrand {
    /// `max(0, x)^2`
    ReluSquared,
    /// `max(0, x) * max(0, b - x)`
    ReluHinge { b: f64 },
    /// `max(0, bi - x) * max(0, bj - x)`
    HingeHinge { bi: f64, bj: f64 },
}

impl MomentIntegrand {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            MomentIntegrand::ReluSquared => {
                let r = x.max(0.0);
                r * r
            }
            MomentIntegrand::ReluHinge { b } => x.max(0.0) * (b - x).max(0.0),
            MomentIntegrand::HingeHinge { bi, bj } => (bi - x).max(0.0) * (bj - x).max(0.0),
        }
    }

    fn hinges(&self) -> Vec<f64> {
        match *self {
            MomentIntegrand::ReluSquared => vec![0.0],
            MomentIntegrand::ReluHinge { b } => vec![0.0, b],
            MomentIntegrand::HingeHinge { bi, bj } => vec![bi, bj],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MomentIntegrand::ReluSquared => true,
            MomentIntegrand::ReluHinge { b } => b.is_finite(),
            MomentIntegrand::HingeHinge { bi, bj } => bi.is_finite() && bj.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(TaanError::InvalidArgument(format!(
                "non-finite breakpoint in {self:?}"
            )))
        }
    }
}

/// Result of a converged quadrature.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureReport {
    pub value: f64,
    pub error_estimate: f64,
    pub panels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Panel {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]` with the listed interior breakpoints.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> Result<QuadratureReport> {
    let mut cuts: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut heap: BinaryHeap<Panel> = cuts
        .windows(2)
        .map(|w| gauss_kronrod(&f, w[0], w[1]))
        .collect();

    loop {
        let (total, err) = heap
            .iter()
            .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
        if err <= ABS_TOL {
            return Ok(QuadratureReport {
                value: total,
                error_estimate: err,
                panels: heap.len(),
            });
        }
        if heap.len() >= MAX_PANELS {
            return Err(TaanError::Numeric(format!(
                "quadrature on [{a}, {b}] did not converge: estimate {total:e}, \
                 error {err:e} after {} panels",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(gauss_kronrod(&f, worst.a, mid));
        heap.push(gauss_kronrod(&f, mid, worst.b));
    }
}

/// Numerical value of `E[f(X)]`, `X ~ N(mu, sigma^2)`, for one of the
/// basis products.
pub fn oracle_moment(integrand: MomentIntegrand, g: GaussianParams) -> Result<QuadratureReport> {
    integrand.validate()?;
    let lo = g.mu() - WINDOW_SIGMAS * g.sigma();
    let hi = g.mu() + WINDOW_SIGMAS * g.sigma();
    integrate(
        |x| integrand.eval(x) * g.pdf(x),
        lo,
        hi,
        &integrand.hinges(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std() -> GaussianParams {
        GaussianParams::standard()
    }

    /// Composite Simpson on a fine uniform grid, as a second opinion.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn relu_squared_standard() {
        let r = oracle_moment(MomentIntegrand::ReluSquared, std()).unwrap();
        assert!((r.value - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn disjoint_supports_integrate_to_zero() {
        let r = oracle_moment(MomentIntegrand::ReluHinge { b: -1.0 }, std()).unwrap();
        assert!(r.value.abs() <= 1e-10);
    }

    #[test]
    fn hinge_one_one_standard() {
        // E[(1 - X)^2; X < 1] = 2 Phi(1) + phi(1) for standard normal X.
        let r = oracle_moment(MomentIntegrand::HingeHinge { bi: 1.0, bj: 1.0 }, std()).unwrap();
        assert!((r.value - 1.924_660_2).abs() < 1e-7);
        // Simpson on the smooth piece (-12, 1); the integrand vanishes above 1.
        let s = simpson(|x| (1.0 - x).powi(2) * std().pdf(x), -12.0, 1.0, 200_000);
        assert!((r.value - s).abs() < 1e-9, "{} vs {s}", r.value);
    }

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, &[]).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn non_finite_breakpoint_rejected() {
        assert!(oracle_moment(MomentIntegrand::ReluHinge { b: f64::NAN }, std()).is_err());
    }

    #[test]
    fn nonconvergence_reports_diagnostics() {
        let err = integrate(|x| (1e6 * x).sin(), 0.0, 1000.0, &[]).unwrap_err();
        assert!(matches!(err, TaanError::Numeric(_)));
        assert!(err.to_string().contains("did not converge"));
    }
}
