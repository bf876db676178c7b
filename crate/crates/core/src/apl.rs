//! Adaptive piecewise-linear activations.
//!
//! `F(x) = max(0, x) + sum_i alpha_i * max(0, b_i - x)` with a fixed,
//! strictly increasing breakpoint grid shared across tasks and layers.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaanError};
use crate::matrix::Matrix;
use crate::moments::Breakpoint;

pub const DEFAULT_GRID_RANGE: (f64, f64) = (-2.0, 2.0);
/// Basis count for wide dense models.
pub const WIDE_BASIS_COUNT: usize = 64;
/// Basis count for small models.
pub const SMALL_BASIS_COUNT: usize = 32;

/// Breakpoints `b_1 < ... < b_M` of the hinge basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BasisGrid {
    breakpoints: Vec<f64>,
}

impl BasisGrid {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(TaanError::InvalidArgument(
                "basis grid needs at least one breakpoint".into(),
            ));
        }
        if let Some(b) = breakpoints.iter().find(|b| !b.is_finite()) {
            return Err(TaanError::InvalidArgument(format!(
                "breakpoint {b} is not finite"
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TaanError::InvalidArgument(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(BasisGrid { breakpoints })
    }

    /// `count` evenly spaced breakpoints covering `[lo, hi]` inclusive; a
    /// single breakpoint sits at the midpoint.
    pub fn uniform(count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count == 0 {
            return Err(TaanError::InvalidArgument("basis count must be >= 1".into()));
        }
        if count == 1 {
            return BasisGrid::new(vec![0.5 * (lo + hi)]);
        }
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(TaanError::InvalidArgument(format!(
                "grid range [{lo}, {hi}] is empty"
            )));
        }
        let step = (hi - lo) / (count - 1) as f64;
        BasisGrid::new((0..count).map(|i| lo + step * i as f64).collect())
    }

    pub fn default_with(count: usize) -> Result<Self> {
        BasisGrid::uniform(count, DEFAULT_GRID_RANGE.0, DEFAULT_GRID_RANGE.1)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    #[inline]
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn iter(&self) -> impl Iterator<Item = Breakpoint> + '_ {
        // Finite by construction.
        self.breakpoints
            .iter()
            .map(|&b| Breakpoint::new(b).expect("validated breakpoint"))
    }

    fn check_coords(&self, coords: &[f64]) -> Result<()> {
        if coords.len() != self.len() {
            return Err(TaanError::Shape(format!(
                "{} coordinates for a grid of {} breakpoints",
                coords.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for BasisGrid {
    type Error = TaanError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        BasisGrid::new(v)
    }
}

impl From<BasisGrid> for Vec<f64> {
    fn from(g: BasisGrid) -> Self {
        g.breakpoints
    }
}

/// Per-task coordinates of one layer's activation: row `t` is task `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct AplCoordinates {
    alpha: Matrix,
}

impl AplCoordinates {
    pub fn new(alpha: Matrix) -> Result<Self> {
        if alpha.rows() == 0 || alpha.cols() == 0 {
            return Err(TaanError::Shape(format!(
                "coordinate matrix must be non-empty, got {}x{}",
                alpha.rows(),
                alpha.cols()
            )));
        }
        if !alpha.is_finite() {
            return Err(TaanError::InvalidArgument(
                "coordinate matrix has non-finite entries".into(),
            ));
        }
        Ok(AplCoordinates { alpha })
    }

    pub fn zeros(tasks: usize, basis: usize) -> Result<Self> {
        AplCoordinates::new(Matrix::zeros(tasks, basis))
    }

    pub fn task_count(&self) -> usize {
        self.alpha.rows()
    }

    pub fn basis_count(&self) -> usize {
        self.alpha.cols()
    }

    pub fn row(&self, task: usize) -> &[f64] {
        self.alpha.row(task)
    }

    pub fn row_mut(&mut self, task: usize) -> &mut [f64] {
        self.alpha.row_mut(task)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.alpha
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.alpha
    }
}

impl TryFrom<Matrix> for AplCoordinates {
    type Error = TaanError;

    fn try_from(m: Matrix) -> Result<Self> {
        AplCoordinates::new(m)
    }
}

impl From<AplCoordinates> for Matrix {
    fn from(c: AplCoordinates) -> Self {
        c.alpha
    }
}

#[inline]
fn eval_unchecked(x: f64, coords: &[f64], grid: &[f64]) -> f64 {
    let mut y = x.max(0.0);
    for (&a, &b) in coords.iter().zip(grid) {
        y += a * (b - x).max(0.0);
    }
    y
}

#[inline]
fn grad_x_unchecked(x: f64, coords: &[f64], grid: &[f64]) -> f64 {
    let mut d = if x > 0.0 { 1.0 } else { 0.0 };
    for (&a, &b) in coords.iter().zip(grid) {
        if x < b {
            d -= a;
        }
    }
    d
}

/// Evaluates the activation at a single point.
pub fn apl_eval(x: f64, coords: &[f64], grid: &BasisGrid) -> Result<f64> {
    grid.check_coords(coords)?;
    Ok(eval_unchecked(x, coords, grid.breakpoints()))
}

/// Elementwise [`apl_eval`] over a pre-activation vector.
pub fn apl_eval_batch(pre_activation: &[f64], coords: &[f64], grid: &BasisGrid) -> Result<Vec<f64>> {
    grid.check_coords(coords)?;
    let bs = grid.breakpoints();
    Ok(pre_activation
        .iter()
        .map(|&x| eval_unchecked(x, coords, bs))
        .collect())
}

/// `dF/dx = 1[x > 0] - sum_i alpha_i 1[x < b_i]`.
///
/// At `x = 0` the ReLU slope is taken as 0 and a hinge at `b_i = x` counts
/// as inactive.
pub fn apl_grad_x(x: f64, coords: &[f64], grid: &BasisGrid) -> Result<f64> {
    grid.check_coords(coords)?;
    Ok(grad_x_unchecked(x, coords, grid.breakpoints()))
}

/// `dF/dalpha_i = max(0, b_i - x)`; independent of the coordinates.
pub fn apl_grad_coords(x: f64, grid: &BasisGrid) -> Vec<f64> {
    grid.breakpoints().iter().map(|&b| (b - x).max(0.0)).collect()
}

/// Batched forward/derivative kernel used by the network. `coords` must
/// already match the grid.
pub(crate) fn eval_and_grad_in_place(pre: &[f64], out: &mut [f64], deriv: &mut [f64], coords: &[f64], grid: &BasisGrid) {
    let bs = grid.breakpoints();
    for ((&x, y), d) in pre.iter().zip(out.iter_mut()).zip(deriv.iter_mut()) {
        *y = eval_unchecked(x, coords, bs);
        *d = grad_x_unchecked(x, coords, bs);
    }
}
