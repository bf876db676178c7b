//! The multi-task network: shared linear layers, each followed by a
//! task-specific APL activation, and one linear output head per task.
//!
//! For task `t`, hidden layer `l` computes `h_l = F_l^t(W_l h_{l-1} + b_l)`
//! where `W_l`, `b_l` are shared and `F_l^t` is row `t` of the layer's
//! coordinate matrix over the model's basis grid.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apl::{self, AplCoordinates, BasisGrid, DEFAULT_GRID_RANGE, WIDE_BASIS_COUNT};
use crate::error::{Result, TaanError};
use crate::matrix::{dot, Matrix};
use crate::metrics::GaussianMixture;

/// Half-width of the uniform range the coordinates start in.
const HEAD_STREAM: u64 = 1 << 32;
const COORD_INIT_SCALE: f64 = 0.01;

const CHECKPOINT_FORMAT: &str = "taan-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Layer widths and activation basis of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Output width of each task's head; its length is the task count.
    pub output_dims: Vec<usize>,
    pub basis_count: usize,
    #[serde(default = "default_grid_range")]
    pub grid_range: (f64, f64),
}

fn default_grid_range() -> (f64, f64) {
    DEFAULT_GRID_RANGE
}

impl ArchSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dims: Vec<usize>, basis_count: usize) -> Self {
        ArchSpec {
            input_dim,
            hidden,
            output_dims,
            basis_count,
            grid_range: DEFAULT_GRID_RANGE,
        }
    }

    /// Three hidden layers of width 1024 with 64 basis functions, the
    /// configuration used for large video-classification workloads.
    pub fn youtube(input_dim: usize, output_dims: Vec<usize>) -> Self {
        ArchSpec::new(input_dim, vec![1024; 3], output_dims, WIDE_BASIS_COUNT)
    }

    pub fn task_count(&self) -> usize {
        self.output_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TaanError::InvalidArgument(msg));
        if self.input_dim == 0 {
            return bad("input width must be positive".into());
        }
        if self.hidden.is_empty() {
            return bad("at least one hidden layer is required".into());
        }
        if let Some(i) = self.hidden.iter().position(|&w| w == 0) {
            return bad(format!("hidden layer {i} has zero width"));
        }
        if self.output_dims.is_empty() {
            return bad("at least one task is required".into());
        }
        if let Some(t) = self.output_dims.iter().position(|&w| w == 0) {
            return bad(format!("task {t} has zero output width"));
        }
        if self.basis_count == 0 {
            return bad("basis count must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<BasisGrid> {
        BasisGrid::uniform(self.basis_count, self.grid_range.0, self.grid_range.1)
    }
}

/// Affine map `x -> W x + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        LinearLayer {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    fn he_uniform(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / input as f64).sqrt();
        let weight = Matrix::from_fn(output, input, |_, _| rng.random_range(-limit..limit));
        LinearLayer {
            weight,
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Applies the layer to every row of `x` (`batch x in`).
    pub fn apply(&self, x: &Matrix) -> Matrix {
        debug_assert_eq!(x.cols(), self.input_dim());
        let out = self.output_dim();
        let mut z = Matrix::zeros(x.rows(), out);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (n, zn) in z.row_mut(r).iter_mut().enumerate() {
                *zn = dot(self.weight.row(n), xr) + self.bias[n];
            }
        }
        z
    }

    /// Accumulates parameter gradients for upstream gradient `dz` and returns
    /// the gradient with respect to the layer input.
    fn backprop(&self, input: &Matrix, dz: &Matrix, grad: &mut LinearLayer) -> Matrix {
        let mut dx = Matrix::zeros(input.rows(), self.input_dim());
        for r in 0..dz.rows() {
            let xr = input.row(r);
            let dzr = dz.row(r);
            for (n, &g) in dzr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[n] += g;
                for (w, &xi) in grad.weight.row_mut(n).iter_mut().zip(xr) {
                    *w += g * xi;
                }
                for (d, &w) in dx.row_mut(r).iter_mut().zip(self.weight.row(n)) {
                    *d += g * w;
                }
            }
        }
        dx
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// A shared linear layer paired with its per-task activation coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveLayer {
    pub linear: LinearLayer,
    pub coords: AplCoordinates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaanModel {
    arch: ArchSpec,
    grid: BasisGrid,
    mixture: GaussianMixture,
    seed: u64,
    layers: Vec<AdaptiveLayer>,
    heads: Vec<LinearLayer>,
}

/// Cached activations of one task's forward pass, consumed by
/// [`TaanModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    task: usize,
    input: Matrix,
    /// Pre-activations `W_l h_{l-1} + b_l`, one per hidden layer.
    pre: Vec<Matrix>,
    /// Activations `h_l`, one per hidden layer.
    post: Vec<Matrix>,
    /// `F'(pre)` elementwise, one per hidden layer.
    slope: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn task(&self) -> usize {
        self.task
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn activations(&self) -> &[Matrix] {
        &self.post
    }
}

/// Gradients laid out exactly like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub layers: Vec<LayerGradients>,
    pub heads: Vec<LinearLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub linear: LinearLayer,
    pub coords: Matrix,
}

impl ModelGradients {
    pub fn zeros_like(model: &TaanModel) -> Self {
        ModelGradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradients {
                    linear: LinearLayer::zeros(l.linear.input_dim(), l.linear.output_dim()),
                    coords: Matrix::zeros(l.coords.task_count(), l.coords.basis_count()),
                })
                .collect(),
            heads: model
                .heads
                .iter()
                .map(|h| LinearLayer::zeros(h.input_dim(), h.output_dim()))
                .collect(),
        }
    }

    /// Flat views in the same order as [`TaanModel::param_tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2 * self.heads.len());
        for l in &self.layers {
            out.push(l.linear.weight.as_slice());
            out.push(&l.linear.bias[..]);
            out.push(l.coords.as_slice());
        }
        for h in &self.heads {
            out.push(h.weight.as_slice());
            out.push(&h.bias[..]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2 * self.heads.len());
        for l in &mut self.layers {
            out.push(l.linear.weight.as_mut_slice());
            out.push(&mut l.linear.bias[..]);
            out.push(l.coords.as_mut_slice());
        }
        for h in &mut self.heads {
            out.push(h.weight.as_mut_slice());
            out.push(&mut h.bias[..]);
        }
        out
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &ModelGradients) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0))
    }
}

impl TaanModel {
    /// Builds a model with seeded He-uniform weights, zero biases and
    /// coordinates drawn uniformly from `[-0.01, 0.01]`.
    pub fn build(arch: ArchSpec, seed: u64) -> Result<Self> {
        TaanModel::build_with_mixture(arch, GaussianMixture::standard_normal(), seed)
    }

    pub fn build_with_mixture(arch: ArchSpec, mixture: GaussianMixture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let grid = arch.grid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks = arch.task_count();
        let mut layers = Vec::with_capacity(arch.hidden.len());
        let mut width = arch.input_dim;
        for &out in &arch.hidden {
            let linear = LinearLayer::he_uniform(width, out, &mut rng);
            let alpha = Matrix::from_fn(tasks, arch.basis_count, |_, _| {
                rng.random_range(-COORD_INIT_SCALE..COORD_INIT_SCALE)
            });
            layers.push(AdaptiveLayer {
                linear,
                coords: AplCoordinates::new(alpha)?,
            });
            width = out;
        }
        // Heads of equal width start identical so that tasks differ only
        // through what they learn from their data.
        let heads = arch
            .output_dims
            .iter()
            .map(|&o| {
                let mut head_rng = ChaCha8Rng::seed_from_u64(seed);
                head_rng.set_stream(HEAD_STREAM + o as u64);
                LinearLayer::he_uniform(width, o, &mut head_rng)
            })
            .collect();
        Ok(TaanModel {
            arch,
            grid,
            mixture,
            seed,
            layers,
            heads,
        })
    }

    /// Assembles a model from explicit parameters, validating every shape.
    pub fn from_parts(
        arch: ArchSpec,
        grid: BasisGrid,
        mixture: GaussianMixture,
        seed: u64,
        layers: Vec<AdaptiveLayer>,
        heads: Vec<LinearLayer>,
    ) -> Result<Self> {
        let model = TaanModel {
            arch,
            grid,
            mixture,
            seed,
            layers,
            heads,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let shape = |msg: String| Err(TaanError::Shape(msg));
        if self.grid.len() != self.arch.basis_count {
            return shape(format!(
                "grid has {} breakpoints, architecture says {}",
                self.grid.len(),
                self.arch.basis_count
            ));
        }
        if self.layers.len() != self.arch.hidden.len() {
            return shape(format!(
                "{} layers for {} hidden widths",
                self.layers.len(),
                self.arch.hidden.len()
            ));
        }
        let tasks = self.task_count();
        let mut width = self.arch.input_dim;
        for (i, (layer, &out)) in self.layers.iter().zip(&self.arch.hidden).enumerate() {
            let lin = &layer.linear;
            if lin.input_dim() != width || lin.output_dim() != out || lin.bias.len() != out {
                return shape(format!(
                    "layer {i} is {}x{} (bias {}), expected {out}x{width}",
                    lin.output_dim(),
                    lin.input_dim(),
                    lin.bias.len()
                ));
            }
            if layer.coords.task_count() != tasks || layer.coords.basis_count() != self.grid.len() {
                return shape(format!(
                    "layer {i} coordinates are {}x{}, expected {tasks}x{}",
                    layer.coords.task_count(),
                    layer.coords.basis_count(),
                    self.grid.len()
                ));
            }
            if !lin.is_finite() {
                return Err(TaanError::InvalidArgument(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
            width = out;
        }
        if self.heads.len() != tasks {
            return shape(format!("{} heads for {tasks} tasks", self.heads.len()));
        }
        for (t, (head, &out)) in self.heads.iter().zip(&self.arch.output_dims).enumerate() {
            if head.input_dim() != width || head.output_dim() != out || head.bias.len() != out {
                return shape(format!(
                    "head {t} is {}x{}, expected {out}x{width}",
                    head.output_dim(),
                    head.input_dim()
                ));
            }
            if !head.is_finite() {
                return Err(TaanError::InvalidArgument(format!(
                    "head {t} has non-finite parameters"
                )));
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn grid(&self) -> &BasisGrid {
        &self.grid
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn task_count(&self) -> usize {
        self.arch.task_count()
    }

    pub fn layers(&self) -> &[AdaptiveLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AdaptiveLayer] {
        &mut self.layers
    }

    pub fn heads(&self) -> &[LinearLayer] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.heads
    }

    pub fn coordinate_matrices(&self) -> Vec<&AplCoordinates> {
        self.layers.iter().map(|l| &l.coords).collect()
    }

    /// Mutable flat views of every parameter tensor, in the order
    /// `(W_l, b_l, alpha_l)` per layer followed by `(W, b)` per head.
    pub fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2 * self.heads.len());
        for l in &mut self.layers {
            out.push(l.linear.weight.as_mut_slice());
            out.push(&mut l.linear.bias[..]);
            out.push(l.coords.matrix_mut().as_mut_slice());
        }
        for h in &mut self.heads {
            out.push(h.weight.as_mut_slice());
            out.push(&mut h.bias[..]);
        }
        out
    }

    pub fn param_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2 * self.heads.len());
        for l in &self.layers {
            out.push(l.linear.weight.as_slice());
            out.push(&l.linear.bias[..]);
            out.push(l.coords.matrix().as_slice());
        }
        for h in &self.heads {
            out.push(h.weight.as_slice());
            out.push(&h.bias[..]);
        }
        out
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.task_count() {
            return Err(TaanError::UnknownTask {
                task,
                task_count: self.task_count(),
            });
        }
        Ok(())
    }

    /// Runs task `task` on a batch `x` (`batch x input_dim`).
    pub fn forward(&self, task: usize, x: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        self.check_task(task)?;
        if x.cols() != self.arch.input_dim {
            return Err(TaanError::Shape(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.arch.input_dim
            )));
        }
        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        let mut slope = Vec::with_capacity(n);
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &post[i - 1] };
            let z = layer.linear.apply(input);
            let mut h = Matrix::zeros(z.rows(), z.cols());
            let mut d = Matrix::zeros(z.rows(), z.cols());
            apl::eval_and_grad_in_place(
                z.as_slice(),
                h.as_mut_slice(),
                d.as_mut_slice(),
                layer.coords.row(task),
                &self.grid,
            );
            pre.push(z);
            post.push(h);
            slope.push(d);
        }
        let last = post.last().expect("at least one hidden layer");
        let out = self.heads[task].apply(last);
        Ok((
            out,
            ForwardTrace {
                task,
                input: x.clone(),
                pre,
                post,
                slope,
            },
        ))
    }

    /// Outputs only.
    pub fn predict(&self, task: usize, x: &Matrix) -> Result<Matrix> {
        self.forward(task, x).map(|(y, _)| y)
    }

    /// Backpropagates `output_grad` (dLoss/dOutput) through the trace of a
    /// forward pass. Only the traced task's coordinate row and head receive
    /// non-zero gradients.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<ModelGradients> {
        let mut grads = ModelGradients::zeros_like(self);
        self.backward_into(trace, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Like [`TaanModel::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        output_grad: &Matrix,
        grads: &mut ModelGradients,
    ) -> Result<()> {
        let task = trace.task;
        self.check_task(task)?;
        let n = self.layers.len();
        let batch = trace.input.rows();
        if trace.pre.len() != n || trace.pre.iter().zip(&self.layers).any(|(z, l)| z.shape() != (batch, l.linear.output_dim())) {
            return Err(TaanError::Shape("forward trace does not match this model".into()));
        }
        if output_grad.shape() != (batch, self.heads[task].output_dim()) {
            return Err(TaanError::Shape(format!(
                "output gradient is {}x{}, expected {batch}x{}",
                output_grad.rows(),
                output_grad.cols(),
                self.heads[task].output_dim()
            )));
        }

        let mut upstream = self.heads[task].backprop(&trace.post[n - 1], output_grad, &mut grads.heads[task]);
        let bps = self.grid.breakpoints();
        for l in (0..n).rev() {
            let z = &trace.pre[l];
            let slope = &trace.slope[l];
            // Coordinate gradient: sum over batch and units of dh * max(0, b_i - z).
            let coord_grad = grads.layers[l].coords.row_mut(task);
            for (&g, &zv) in upstream.as_slice().iter().zip(z.as_slice()) {
                if g == 0.0 {
                    continue;
                }
                for (cg, &b) in coord_grad.iter_mut().zip(bps) {
                    if zv < b {
                        *cg += g * (b - zv);
                    }
                }
            }
            let mut dz = upstream;
            for (d, &s) in dz.as_mut_slice().iter_mut().zip(slope.as_slice()) {
                *d *= s;
            }
            let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            upstream = self.layers[l].linear.backprop(input, &dz, &mut grads.layers[l].linear);
        }
        Ok(())
    }

    /// Copy of the model in which every layer's coordinate rows are replaced
    /// by their mean, so all tasks share one activation per layer.
    pub fn to_hard_sharing(&self) -> TaanModel {
        let mut out = self.clone();
        for layer in &mut out.layers {
            let (t, m) = (layer.coords.task_count(), layer.coords.basis_count());
            let mut mean = vec![0.0; m];
            for task in 0..t {
                for (s, a) in mean.iter_mut().zip(layer.coords.row(task)) {
                    *s += a;
                }
            }
            for s in &mut mean {
                *s /= t as f64;
            }
            for task in 0..t {
                layer.coords.row_mut(task).copy_from_slice(&mean);
            }
        }
        out
    }

    /// Copies task 0's head into every other head. Fails when the tasks'
    /// output widths differ.
    pub fn tie_heads(&mut self) -> Result<()> {
        let first = self.heads[0].clone();
        if self.heads.iter().any(|h| h.output_dim() != first.output_dim()) {
            return Err(TaanError::Shape("heads have different output widths".into()));
        }
        for h in &mut self.heads[1..] {
            *h = first.clone();
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| TaanError::io(path, e))?;
        let writer = std::io::BufWriter::new(file);
        let ckpt = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            model: self,
        };
        serde_json::to_writer(writer, &ckpt).map_err(|e| TaanError::Serde(e.to_string()))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TaanError::io(path, e))?;
        TaanModel::from_checkpoint_str(&text)
    }

    pub fn to_checkpoint_string(&self) -> Result<String> {
        serde_json::to_string(&CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            model: self,
        })
        .map_err(|e| TaanError::Serde(e.to_string()))
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let ckpt: CheckpointOwned =
            serde_json::from_str(text).map_err(|e| TaanError::Serde(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(TaanError::Serde(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.model.validate()?;
        Ok(ckpt.model)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a TaanModel,
}

#[derive(Deserialize)]
struct CheckpointOwned {
    format: String,
    version: u32,
    model: TaanModel,
}
