//! Small differentiable objectives with analytic gradients and seeded
//! synthetic data.
//!
//! Batch losses are evaluated in fixed-size row chunks whose partial sums are
//! combined in order, so results do not depend on the thread count.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::par;
use crate::param_store::ParamStore;

/// Rows per independently evaluated chunk.
const ROW_CHUNK: usize = 64;

/// Coordinates probed by [`finite_diff_check`] on large models.
pub const FD_MAX_COORDS: usize = 200;

/// Denominator floor of the relative error in [`finite_diff_check`].
pub const FD_DENOM_FLOOR: f64 = 1e-6;

const STREAM_DATA: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_PROBE: u64 = 3;

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Labeled rows, row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub width: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, width: usize) -> Result<Self> {
        if inputs.len() != targets.len() * width {
            return Err(Error::ShapeMismatch {
                expected: targets.len() * width,
                got: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            width,
        })
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    fn push_row(&mut self, x: &[f64], y: f64) {
        self.inputs.extend_from_slice(x);
        self.targets.push(y);
    }
}

/// Sampling with replacement from a fixed pool.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(seed: u64, batch_size: usize) -> Self {
        Self {
            rng: rng(seed, STREAM_BATCH),
            batch_size,
        }
    }

    pub fn next_batch(&mut self, pool: &Batch) -> Batch {
        let mut out = Batch {
            width: pool.width,
            ..Batch::default()
        };
        if pool.is_empty() {
            return out;
        }
        let idx: Vec<usize> = (0..pool.rows()).collect();
        for _ in 0..self.batch_size {
            let &i = idx.choose(&mut self.rng).expect("non-empty pool");
            out.push_row(pool.row(i), pool.targets[i]);
        }
        out
    }
}

/// loss = ½ θᵀ diag(a) θ − bᵀθ, grad = diag(a) θ − b.
pub fn quadratic_loss_grad(theta: &[f64], diag: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    if diag.len() != theta.len() {
        return Err(Error::ShapeMismatch {
            expected: theta.len(),
            got: diag.len(),
        });
    }
    if b.len() != theta.len() {
        return Err(Error::ShapeMismatch {
            expected: theta.len(),
            got: b.len(),
        });
    }
    if let Some(&a) = diag.iter().find(|&&a| a.is_nan() || a <= 0.0) {
        return Err(Error::validation(
            "diag",
            format!("entries must be > 0, got {a}"),
        ));
    }
    let mut loss = 0.0;
    let grad = theta
        .iter()
        .zip(diag)
        .zip(b)
        .map(|((&x, &a), &bi)| {
            loss += 0.5 * a * x * x - bi * x;
            a * x - bi
        })
        .collect();
    Ok((loss, grad))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + eᶻ) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn reduce_chunks(parts: Vec<(f64, Vec<f64>)>, n: usize, rows: usize) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / rows as f64;
    grad.iter_mut().for_each(|x| *x *= inv);
    (loss * inv, grad)
}

/// Mean binary cross-entropy with a sigmoid link.
pub fn logistic_loss_grad(theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.width != theta.len() {
        return Err(Error::ShapeMismatch {
            expected: theta.len(),
            got: batch.width,
        });
    }
    if let Some(index) = batch.targets.iter().position(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::validation(
            "labels",
            format!("row {index} is not 0 or 1"),
        ));
    }
    let n = theta.len();
    let parts = par::map_chunks(batch.rows(), ROW_CHUNK, |rows| {
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for i in rows {
            let x = batch.row(i);
            let y = batch.targets[i];
            let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
            loss += softplus(z) - y * z;
            let r = sigmoid(z) - y;
            grad.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
        }
        (loss, grad)
    });
    Ok(reduce_chunks(parts, n, batch.rows()))
}

/// input → tanh hidden → scalar linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.hidden + 1
    }

    /// Offsets of W1 (hidden × input, row-major), b1, W2, b2.
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        (w1, b1, w2, b2)
    }

    pub fn layout(&self, control_biases: bool) -> Vec<GroupLayout> {
        vec![
            GroupLayout::new("w1", self.hidden * self.input, true),
            GroupLayout::new("b1", self.hidden, control_biases),
            GroupLayout::new("w2", self.hidden, true),
            GroupLayout::new("b2", 1, control_biases),
        ]
    }

    fn forward(&self, theta: &[f64], x: &[f64], hidden: &mut [f64]) -> f64 {
        let (w1, b1, w2, b2) = self.offsets();
        let mut out = theta[b2];
        for j in 0..self.hidden {
            let row = &theta[w1 + j * self.input..w1 + (j + 1) * self.input];
            let z: f64 = theta[b1 + j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            hidden[j] = z.tanh();
            out += theta[w2 + j] * hidden[j];
        }
        out
    }
}

/// Mean squared error of the MLP and its backpropagated gradient.
pub fn mlp_loss_grad(theta: &[f64], batch: &Batch, shape: MlpShape) -> Result<(f64, Vec<f64>)> {
    let n = shape.param_count();
    if theta.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: theta.len(),
        });
    }
    if batch.width != shape.input {
        return Err(Error::ShapeMismatch {
            expected: shape.input,
            got: batch.width,
        });
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (w1, b1, w2, b2) = shape.offsets();
    let parts = par::map_chunks(batch.rows(), ROW_CHUNK, |rows| {
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        let mut h = vec![0.0; shape.hidden];
        for i in rows {
            let x = batch.row(i);
            let err = shape.forward(theta, x, &mut h) - batch.targets[i];
            loss += err * err;
            let d = 2.0 * err;
            grad[b2] += d;
            for j in 0..shape.hidden {
                grad[w2 + j] += d * h[j];
                let dz = d * theta[w2 + j] * (1.0 - h[j] * h[j]);
                grad[b1 + j] += dz;
                let row = &mut grad[w1 + j * shape.input..w1 + (j + 1) * shape.input];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g += dz * xi);
            }
        }
        (loss, grad)
    });
    Ok(reduce_chunks(parts, n, batch.rows()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    pub name: String,
    pub length: usize,
    pub controlled: bool,
}

impl GroupLayout {
    fn new(name: &str, length: usize, controlled: bool) -> Self {
        Self {
            name: name.to_string(),
            length,
            controlled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Quadratic,
    Logistic,
    Mlp,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quadratic" => Ok(TaskKind::Quadratic),
            "logistic" => Ok(TaskKind::Logistic),
            "mlp" => Ok(TaskKind::Mlp),
            other => Err(format!("unknown task `{other}` (quadratic, logistic, mlp)")),
        }
    }
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Quadratic, TaskKind::Logistic, TaskKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::Logistic => "logistic",
            TaskKind::Mlp => "mlp",
        }
    }

    /// Finite-difference step for gradient checks. The quadratic's central
    /// difference is exact for any h, so a large step keeps rounding small.
    pub fn fd_step(self) -> f64 {
        match self {
            TaskKind::Quadratic => 1e-3,
            TaskKind::Logistic | TaskKind::Mlp => 1e-5,
        }
    }

    /// Largest relative gradient error accepted by [`check_gradient`].
    pub fn fd_tolerance(self) -> f64 {
        match self {
            TaskKind::Quadratic => 1e-9,
            TaskKind::Logistic => 1e-6,
            TaskKind::Mlp => 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dim: usize,
    pub hidden: usize,
    pub control_biases: bool,
    pub pool_size: usize,
    pub val_size: usize,
    /// Std-dev of label noise for the MLP regression targets.
    pub noise: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            dim: 8,
            hidden: 16,
            control_biases: false,
            pool_size: 1024,
            val_size: 512,
            noise: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::validation("dim", "must be positive"));
        }
        if self.kind == TaskKind::Mlp && self.hidden == 0 {
            return Err(Error::validation("hidden", "must be positive"));
        }
        if self.kind != TaskKind::Quadratic && (self.pool_size == 0 || self.val_size == 0) {
            return Err(Error::validation(
                "pool_size",
                "data pools must be non-empty",
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::validation("noise", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Objective {
    Quadratic { diag: Vec<f64>, b: Vec<f64> },
    Logistic,
    Mlp(MlpShape),
}

/// An objective with its data pools, built deterministically from a seed.
#[derive(Debug, Clone)]
pub struct Task {
    spec: TaskSpec,
    objective: Objective,
    layout: Vec<GroupLayout>,
    train: Batch,
    val: Batch,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite positive std")
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, width: usize) -> Vec<f64> {
    let n = normal(1.0);
    (0..rows * width).map(|_| n.sample(rng)).collect()
}

impl Task {
    pub fn build(spec: &TaskSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng(seed, STREAM_DATA);
        let (objective, layout, train, val) = match spec.kind {
            TaskKind::Quadratic => {
                let u = Uniform::new(0.5, 2.0).expect("valid range");
                let diag = (0..spec.dim).map(|_| u.sample(&mut r)).collect();
                let b = (0..spec.dim).map(|_| normal(1.0).sample(&mut r)).collect();
                (
                    Objective::Quadratic { diag, b },
                    vec![GroupLayout::new("x", spec.dim, true)],
                    Batch::default(),
                    Batch::default(),
                )
            }
            TaskKind::Logistic => {
                let d = spec.dim;
                let teacher: Vec<f64> = (0..d)
                    .map(|_| normal(2.0 / (d as f64).sqrt()).sample(&mut r))
                    .collect();
                let mut make = |rows: usize| {
                    let inputs = gaussian_rows(&mut r, rows, d);
                    let targets = (0..rows)
                        .map(|i| {
                            let z: f64 = inputs[i * d..(i + 1) * d]
                                .iter()
                                .zip(&teacher)
                                .map(|(a, b)| a * b)
                                .sum();
                            if r.random::<f64>() < sigmoid(z) {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    Batch {
                        inputs,
                        targets,
                        width: d,
                    }
                };
                let train = make(spec.pool_size);
                let val = make(spec.val_size);
                (
                    Objective::Logistic,
                    vec![GroupLayout::new("w", d, true)],
                    train,
                    val,
                )
            }
            TaskKind::Mlp => {
                let shape = MlpShape {
                    input: spec.dim,
                    hidden: spec.hidden,
                };
                let teacher = mlp_teacher(&mut r, shape);
                let noise = spec.noise;
                let mut make = |rows: usize| {
                    let inputs = gaussian_rows(&mut r, rows, shape.input);
                    let mut h = vec![0.0; shape.hidden];
                    let targets = (0..rows)
                        .map(|i| {
                            let x = &inputs[i * shape.input..(i + 1) * shape.input];
                            let clean = shape.forward(&teacher, x, &mut h);
                            if noise > 0.0 {
                                clean + normal(noise).sample(&mut r)
                            } else {
                                clean
                            }
                        })
                        .collect();
                    Batch {
                        inputs,
                        targets,
                        width: shape.input,
                    }
                };
                let train = make(spec.pool_size);
                let val = make(spec.val_size);
                (
                    Objective::Mlp(shape),
                    shape.layout(spec.control_biases),
                    train,
                    val,
                )
            }
        };
        Ok(Self {
            spec: spec.clone(),
            objective,
            layout,
            train,
            val,
        })
    }

    pub fn name(&self) -> &'static str {
        self.spec.kind.name()
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[GroupLayout] {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.iter().map(|g| g.length).sum()
    }

    pub fn train_pool(&self) -> &Batch {
        &self.train
    }

    pub fn val_pool(&self) -> &Batch {
        &self.val
    }

    /// Seeded initial parameters: N(0, 1/fan_in) weights, zero biases.
    pub fn init_theta(&self, seed: u64) -> Vec<f64> {
        let mut r = rng(seed, STREAM_INIT);
        match &self.objective {
            Objective::Quadratic { .. } => (0..self.spec.dim)
                .map(|_| normal(1.0).sample(&mut r))
                .collect(),
            Objective::Logistic => {
                let n = normal(1.0 / (self.spec.dim as f64).sqrt());
                (0..self.spec.dim).map(|_| n.sample(&mut r)).collect()
            }
            Objective::Mlp(shape) => {
                let mut theta = vec![0.0; shape.param_count()];
                let (w1, b1, w2, b2) = shape.offsets();
                let n1 = normal(1.0 / (shape.input as f64).sqrt());
                theta[w1..b1]
                    .iter_mut()
                    .for_each(|x| *x = n1.sample(&mut r));
                let n2 = normal(1.0 / (shape.hidden as f64).sqrt());
                theta[w2..b2]
                    .iter_mut()
                    .for_each(|x| *x = n2.sample(&mut r));
                theta
            }
        }
    }

    pub fn init_store(&self, seed: u64) -> Result<ParamStore> {
        let layout: Vec<(&str, usize, bool)> = self
            .layout
            .iter()
            .map(|g| (g.name.as_str(), g.length, g.controlled))
            .collect();
        ParamStore::from_layout(self.init_theta(seed), &layout)
    }

    pub fn sampler(&self, seed: u64, batch_size: usize) -> BatchSampler {
        BatchSampler::new(seed, batch_size)
    }

    pub fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        match &self.objective {
            Objective::Quadratic { diag, b } => quadratic_loss_grad(theta, diag, b),
            Objective::Logistic => logistic_loss_grad(theta, batch),
            Objective::Mlp(shape) => mlp_loss_grad(theta, batch, *shape),
        }
    }

    pub fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        self.loss_and_grad(theta, batch).map(|(l, _)| l)
    }

    /// Loss over the whole held-out pool (the objective itself for the
    /// quadratic task).
    pub fn val_loss(&self, theta: &[f64]) -> Result<f64> {
        self.loss(theta, &self.val)
    }

    /// Random parameters and batch for gradient checks.
    pub fn probe(&self, seed: u64, batch_size: usize) -> (Vec<f64>, Batch) {
        let mut r = rng(seed, STREAM_PROBE);
        let n = normal(1.0);
        let theta = self
            .init_theta(seed)
            .into_iter()
            .map(|x| x + 0.5 * n.sample(&mut r))
            .collect();
        let batch = BatchSampler::new(seed, batch_size).next_batch(&self.train);
        (theta, batch)
    }
}

fn mlp_teacher(r: &mut ChaCha8Rng, shape: MlpShape) -> Vec<f64> {
    let mut theta = vec![0.0; shape.param_count()];
    let (w1, b1, w2, b2) = shape.offsets();
    let n1 = normal(2.0 / (shape.input as f64).sqrt());
    theta[w1..b1].iter_mut().for_each(|x| *x = n1.sample(r));
    let nb = normal(0.5);
    theta[b1..w2].iter_mut().for_each(|x| *x = nb.sample(r));
    let n2 = normal(2.0 / (shape.hidden as f64).sqrt());
    theta[w2..b2].iter_mut().for_each(|x| *x = n2.sample(r));
    theta[b2] = nb.sample(r);
    theta
}

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Compares the analytic gradient with (f(θ+heᵢ) − f(θ−heᵢ)) / 2h.
///
/// Relative error is |a − n| / max(|a|, |n|, [`FD_DENOM_FLOOR`]). Models with
/// more than [`FD_MAX_COORDS`] parameters are probed on an evenly strided
/// subset of coordinates.
pub fn finite_diff_check(task: &Task, theta: &[f64], batch: &Batch, h: f64) -> Result<GradCheck> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::validation("h", "step must be > 0"));
    }
    let (_, grad) = task.loss_and_grad(theta, batch)?;
    let n = theta.len();
    let coords: Vec<usize> = if n <= FD_MAX_COORDS {
        (0..n).collect()
    } else {
        (0..FD_MAX_COORDS).map(|k| k * n / FD_MAX_COORDS).collect()
    };
    let errors = par::map_range(coords.len(), |k| -> Result<f64> {
        let i = coords[k];
        let mut probe = theta.to_vec();
        let plus = theta[i] + h;
        let minus = theta[i] - h;
        probe[i] = plus;
        let f_plus = task.loss(&probe, batch)?;
        probe[i] = minus;
        let f_minus = task.loss(&probe, batch)?;
        let numeric = (f_plus - f_minus) / (plus - minus);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(FD_DENOM_FLOOR);
        Ok((analytic - numeric).abs() / denom)
    });
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        coords_checked: coords.len(),
    };
    for (k, e) in errors.into_iter().enumerate() {
        let e = e?;
        if e > out.max_rel_error || e.is_nan() {
            out.max_rel_error = e;
            out.worst_index = coords[k];
        }
    }
    Ok(out)
}

/// Gradient check of the default-sized `kind` task at a seeded random point.
pub fn check_gradient(kind: TaskKind, seed: u64) -> Result<GradCheck> {
    let task = Task::build(&TaskSpec::new(kind), seed)?;
    let (theta, batch) = task.probe(seed, FD_BATCH);
    finite_diff_check(&task, &theta, &batch, kind.fd_step())
}

const FD_BATCH: usize = 16;
