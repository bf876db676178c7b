//! Self-checks run by `taan check`: closed-form moments against quadrature,
//! analytic gradients against central differences, and the first-layer
//! bound on an exact-Gaussian construction.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{check_l1_bounds, standard_input_unit_gaussians, BoundCheckReport};
use crate::apl::{apl_eval, apl_grad_coords, apl_grad_x, AplCoordinates, BasisGrid};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::metrics::{build_gram, GaussianMixture};
use crate::moments::{moment_b0_sq, moment_b0b, moment_bb, oracle_moment, Breakpoint, GaussianParams, MomentIntegrand};
use crate::network::{ArchSpec, TaanModel};
use crate::regularizers::{reg_grad, reg_value, RegularizerKind};
use crate::data::Targets;
use crate::training::{task_loss, LossKind};

/// One named check with its worst observed error and the allowed limit.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub limit: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.worst <= self.limit
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
    pub notes: String,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(CheckLine::passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            let _ = writeln!(
                s,
                "{:<4} {:<40} cases={:<6} worst={:.3e} limit={:.1e}",
                if l.passed() { "PASS" } else { "FAIL" },
                l.name,
                l.cases,
                l.worst,
                l.limit
            );
        }
        s.push_str(&self.notes);
        s
    }
}

pub const MOMENT_TOLERANCE: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

/// Closed-form moments against the quadrature oracle over a grid spanning
/// mu in [-3, 3], sigma in [0.3, 3] and breakpoints in [-2, 3].
pub fn check_moments() -> Result<CheckReport> {
    let mus = [-3.0, -1.5, 0.0, 1.5, 3.0];
    let sigmas = [0.3, 0.9, 1.8, 3.0];
    let bs = [-2.0, -0.75, 0.5, 1.75, 3.0];
    let mut lines = vec![
        CheckLine { name: "E[B0^2]".into(), cases: 0, worst: 0.0, limit: MOMENT_TOLERANCE },
        CheckLine { name: "E[B0 B_b]".into(), cases: 0, worst: 0.0, limit: MOMENT_TOLERANCE },
        CheckLine { name: "E[B_bi B_bj]".into(), cases: 0, worst: 0.0, limit: MOMENT_TOLERANCE },
    ];
    let mut record = |i: usize, closed: f64, oracle: f64| {
        lines[i].cases += 1;
        lines[i].worst = lines[i].worst.max((closed - oracle).abs());
    };
    for &mu in &mus {
        for &sigma in &sigmas {
            let g = GaussianParams::new(mu, sigma)?;
            record(0, moment_b0_sq(g), oracle_moment(MomentIntegrand::ReluSquared, g)?.value);
            for (i, &bi) in bs.iter().enumerate() {
                let b = Breakpoint::new(bi)?;
                record(1, moment_b0b(b, g), oracle_moment(MomentIntegrand::ReluHinge { b: bi }, g)?.value);
                for &bj in &bs[i..] {
                    let closed = moment_bb(b, Breakpoint::new(bj)?, g);
                    let oracle = oracle_moment(MomentIntegrand::HingeHinge { bi, bj }, g)?.value;
                    record(2, closed, oracle);
                }
            }
        }
    }
    Ok(CheckReport { lines, notes: String::new() })
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central<F: FnMut(f64) -> Result<f64>>(mut f: F, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

const POINTS: usize = 100;
const STEP: f64 = 1e-6;
// SVD-based penalty values carry more roundoff, so they use a wider step.
const REG_STEP: f64 = 1e-5;

// Keeps sample points clear of every kink so central differences are exact
// up to rounding.
fn clear_of(x: f64, kinks: &[f64], gap: f64) -> bool {
    x.abs() > gap && kinks.iter().all(|b| (x - b).abs() > gap)
}

/// Analytic gradients of the activation, the three regularizers and the
/// network against central finite differences.
pub fn check_gradients(seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();

    let grid = BasisGrid::uniform(8, -2.0, 2.0)?;
    let (mut wx, mut wc) = (0.0_f64, 0.0_f64);
    let mut done = 0;
    while done < POINTS {
        let x = rng.random_range(-3.0..3.0);
        if !clear_of(x, grid.breakpoints(), 1e-3) {
            continue;
        }
        let coords: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fd = central(|v| apl_eval(v, &coords, &grid), x, STEP)?;
        wx = wx.max(relative_error(apl_grad_x(x, &coords, &grid)?, fd));
        let gc = apl_grad_coords(x, &grid);
        for i in 0..8 {
            let fd = central(
                |v| {
                    let mut c = coords.clone();
                    c[i] = v;
                    apl_eval(x, &c, &grid)
                },
                coords[i],
                STEP,
            )?;
            wc = wc.max(relative_error(gc[i], fd));
        }
        done += 1;
    }
    lines.push(CheckLine { name: "activation dF/dx".into(), cases: POINTS, worst: wx, limit: GRADIENT_TOLERANCE });
    lines.push(CheckLine { name: "activation dF/dalpha".into(), cases: POINTS, worst: wc, limit: GRADIENT_TOLERANCE });

    let cache = build_gram(&grid, &GaussianMixture::standard_normal());
    for (kind, name) in [
        (RegularizerKind::TraceNorm, "trace-norm regularizer"),
        (RegularizerKind::Cosine, "cosine regularizer"),
        (RegularizerKind::Distance, "distance regularizer"),
    ] {
        let mut worst = 0.0_f64;
        for _ in 0..POINTS {
            let alpha = AplCoordinates::new(Matrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0)))?;
            let g = reg_grad(kind, &alpha, &cache)?;
            for k in 0..alpha.matrix().as_slice().len() {
                let fd = central(
                    |v| {
                        let mut a = alpha.clone();
                        a.matrix_mut().as_mut_slice()[k] = v;
                        reg_value(kind, &a, &cache)
                    },
                    alpha.matrix().as_slice()[k],
                    REG_STEP,
                )?;
                worst = worst.max(relative_error(g.as_slice()[k], fd));
            }
        }
        lines.push(CheckLine { name: name.into(), cases: POINTS, worst, limit: GRADIENT_TOLERANCE });
    }

    let mut worst = 0.0_f64;
    let mut done = 0;
    while done < POINTS {
        let model = random_network(&mut rng)?;
        let x = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.5..1.5));
        let y = Matrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let task = rng.random_range(0..model.task_count());
        if !network_point_is_smooth(&model, task, &x)? {
            continue;
        }
        let targets = Targets::Real(y);
        let loss = |m: &TaanModel| -> Result<f64> {
            let out = m.predict(task, &x)?;
            Ok(task_loss(LossKind::SquaredError, &out, &targets)?.0)
        };
        let (out, trace) = model.forward(task, &x)?;
        let (_, dout) = task_loss(LossKind::SquaredError, &out, &targets)?;
        let grads = model.backward(&trace, &dout)?;
        let analytic: Vec<f64> = grads.tensors().concat();
        let mut k = 0;
        for tensor in 0..model.param_tensors().len() {
            for i in 0..model.param_tensors()[tensor].len() {
                let x0 = model.param_tensors()[tensor][i];
                let fd = central(
                    |v| {
                        let mut m = model.clone();
                        m.param_tensors_mut()[tensor][i] = v;
                        loss(&m)
                    },
                    x0,
                    STEP,
                )?;
                worst = worst.max(relative_error(analytic[k], fd));
                k += 1;
            }
        }
        done += 1;
    }
    lines.push(CheckLine { name: "network backward".into(), cases: POINTS, worst, limit: GRADIENT_TOLERANCE });
    Ok(CheckReport { lines, notes: String::new() })
}

fn random_network(rng: &mut ChaCha8Rng) -> Result<TaanModel> {
    let mut model = TaanModel::build(ArchSpec::new(3, vec![4, 4], vec![2, 2, 2], 6), rng.random())?;
    for layer in model.layers_mut() {
        for a in layer.coords.matrix_mut().as_mut_slice() {
            *a = rng.random_range(-0.8..0.8);
        }
        for b in &mut layer.linear.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    Ok(model)
}

// Rejects points where a perturbation of size STEP could move any
// pre-activation across a kink.
fn network_point_is_smooth(model: &TaanModel, task: usize, x: &Matrix) -> Result<bool> {
    let (_, trace) = model.forward(task, x)?;
    let kinks = model.grid().breakpoints();
    Ok(trace
        .pre_activations()
        .iter()
        .all(|z| z.as_slice().iter().all(|&v| clear_of(v, kinks, 1e-3))))
}

/// Exact-Gaussian construction: standard-normal inputs, known first layer,
/// non-trivial activations, envelope 1.
pub fn bound_construction(seed: u64) -> Result<TaanModel> {
    let mut model = TaanModel::build(ArchSpec::new(4, vec![8], vec![1, 1, 1], 16), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let layer = &mut model.layers_mut()[0];
    for a in layer.coords.matrix_mut().as_mut_slice() {
        *a = rng.random_range(-0.5..0.5);
    }
    for b in &mut layer.linear.bias {
        *b = rng.random_range(-1.0..1.0);
    }
    Ok(model)
}

pub fn check_bounds(seed: u64, samples: usize) -> Result<(CheckReport, BoundCheckReport)> {
    let model = bound_construction(seed)?;
    let units = standard_input_unit_gaussians(&model)?;
    let report = check_l1_bounds(&model, &units, 1.0, &[(0, 0), (0, 1), (1, 2)], samples, seed)?;
    let worst = |f: &dyn Fn(&crate::analysis::PairBound) -> f64| {
        report.pairs.iter().map(f).fold(0.0_f64, f64::max)
    };
    // Deviations in units of the standard error; 3 is the pass limit.
    let z = |d: f64, se: f64| if se > 0.0 { d / se } else if d == 0.0 { 0.0 } else { f64::INFINITY };
    let lines = vec![
        CheckLine {
            name: "inner bound excess (stderr)".into(),
            cases: report.pairs.len(),
            worst: worst(&|p| z(p.inner_mc - p.inner_bound, p.inner_stderr)),
            limit: 3.0,
        },
        CheckLine {
            name: "distance bound excess (stderr)".into(),
            cases: report.pairs.len(),
            worst: worst(&|p| z(p.dist_mc - p.dist_bound, p.dist_stderr)),
            limit: 3.0,
        },
        CheckLine {
            name: "inner equality gap (stderr)".into(),
            cases: report.pairs.len(),
            worst: worst(&|p| z((p.inner_mc - p.inner_bound).abs(), p.inner_stderr)),
            limit: 3.0,
        },
        CheckLine {
            name: "distance equality gap (stderr)".into(),
            cases: report.pairs.len(),
            worst: worst(&|p| z((p.dist_mc - p.dist_bound).abs(), p.dist_stderr)),
            limit: 3.0,
        },
    ];
    let notes = report.to_table();
    Ok((CheckReport { lines, notes }, report))
}
