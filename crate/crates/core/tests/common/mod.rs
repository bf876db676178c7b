//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `max(0, x) + sum_i alpha_i max(0, b_i - x)`, written out directly.
pub fn apl_reference(x: f64, coords: &[f64], breakpoints: &[f64]) -> f64 {
    let mut y = if x > 0.0 { x } else { 0.0 };
    for (a, b) in coords.iter().zip(breakpoints) {
        if *b > x {
            y += a * (b - x);
        }
    }
    y
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Singular values by one-sided Jacobi rotations on the columns of `a`
/// (rows x cols, row-major), sorted descending.
pub fn jacobi_singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    // Work on the orientation with fewer columns.
    let (m, n, mut u) = if cols <= rows {
        (rows, cols, a.to_vec())
    } else {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        (cols, rows, t)
    };
    let col = |u: &[f64], j: usize| -> Vec<f64> { (0..m).map(|i| u[i * n + j]).collect() };
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let cp = col(&u, p);
                let cq = col(&u, q);
                let alpha: f64 = cp.iter().map(|v| v * v).sum();
                let beta: f64 = cq.iter().map(|v| v * v).sum();
                let gamma: f64 = cp.iter().zip(&cq).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let x = u[i * n + p];
                    let y = u[i * n + q];
                    u[i * n + p] = c * x - s * y;
                    u[i * n + q] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| col(&u, j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Mean and standard error of `f(X)` for X drawn from a Gaussian mixture.
pub fn mixture_monte_carlo(
    f: impl Fn(f64) -> f64,
    components: &[(f64, f64, f64)],
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let normals: Vec<Normal<f64>> = components
        .iter()
        .map(|&(_, mu, sigma)| Normal::new(mu, sigma).unwrap())
        .collect();
    let (mut n, mut mean, mut m2) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..samples {
        let mut u: f64 = rng.random();
        let mut k = 0;
        while k + 1 < components.len() && u >= components[k].0 {
            u -= components[k].0;
            k += 1;
        }
        let v = f(normals[k].sample(rng));
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

/// Simpson's rule on `[a, b]` with an even number of panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn gaussian_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Inner product of two activations under a mixture by Simpson quadrature
/// on a window wide enough for every component.
pub fn quadrature_inner(c1: &[f64], c2: &[f64], breakpoints: &[f64], components: &[(f64, f64, f64)]) -> f64 {
    components
        .iter()
        .map(|&(w, mu, sigma)| {
            // Split at the kinks so each Simpson piece is smooth.
            let mut cuts: Vec<f64> = vec![mu - 12.0 * sigma, mu + 12.0 * sigma, 0.0];
            cuts.extend_from_slice(breakpoints);
            cuts.retain(|c| (mu - 12.0 * sigma..=mu + 12.0 * sigma).contains(c));
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let f = |x: f64| apl_reference(x, c1, breakpoints) * apl_reference(x, c2, breakpoints) * gaussian_pdf(x, mu, sigma);
            w * cuts.windows(2).map(|p| simpson(f, p[0], p[1], 2000)).sum::<f64>()
        })
        .sum()
}

/// `E[f(X)]` for `X ~ N(mu, sigma^2)` by Simpson's rule, split at `kinks`.
pub fn gaussian_expectation(f: impl Fn(f64) -> f64, mu: f64, sigma: f64, kinks: &[f64], panels: usize) -> f64 {
    let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
    let mut cuts = vec![lo, hi];
    cuts.extend(kinks.iter().copied().filter(|k| (lo..=hi).contains(k)));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|p| simpson(|x| f(x) * gaussian_pdf(x, mu, sigma), p[0], p[1], panels))
        .sum()
}

/// Activation evaluator using suffix sums over sorted breakpoints, so each
/// evaluation costs one binary search.
pub struct FastApl {
    breakpoints: Vec<f64>,
    // suffix sums of alpha_i and alpha_i * b_i from index i onwards
    sa: Vec<f64>,
    sab: Vec<f64>,
}

impl FastApl {
    pub fn new(coords: &[f64], breakpoints: &[f64]) -> Self {
        let n = breakpoints.len();
        let mut sa = vec![0.0; n + 1];
        let mut sab = vec![0.0; n + 1];
        for i in (0..n).rev() {
            sa[i] = sa[i + 1] + coords[i];
            sab[i] = sab[i + 1] + coords[i] * breakpoints[i];
        }
        FastApl { breakpoints: breakpoints.to_vec(), sa, sab }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= x);
        x.max(0.0) + self.sab[k] - x * self.sa[k]
    }
}
