//! Differentiable toy tasks with closed-form gradients.
//!
//! These stand in for source (pretraining) and target (fine-tuning) tasks.
//! Every kind returns the mean loss over a batch together with its exact
//! gradient; [`finite_diff_grad`] is the independent check.

mod generate;
pub mod mlp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numkit::{ParamVector, RandomSource};

pub use generate::{
    draw_generative_params, gen_transfer_pair, make_mlp_task, GenerativeParams, TaskShape, TransferPair,
    TransferSpec,
};
pub use mlp::MlpShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "quadratic")]
    Quadratic,
    #[serde(rename = "linear-regression")]
    LinearRegression,
    #[serde(rename = "logistic-regression")]
    LogisticRegression,
    #[serde(rename = "mlp-1h")]
    Mlp,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::LinearRegression => "linear-regression",
            TaskKind::LogisticRegression => "logistic-regression",
            TaskKind::Mlp => "mlp-1h",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(TaskKind::Quadratic),
            "linear-regression" => Ok(TaskKind::LinearRegression),
            "logistic-regression" => Ok(TaskKind::LogisticRegression),
            "mlp-1h" => Ok(TaskKind::Mlp),
            other => Err(Error::invalid(format!("unknown task kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskRole {
    Source,
    Target,
    Standalone,
}

/// Replayable description of a generated task. Its JSON form is
/// `{"kind", "dim", "seed", "role", "rho", "generator": {..TaskShape..}}`;
/// [`TaskDescriptor::realize`] regenerates the task bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub kind: TaskKind,
    pub dim: usize,
    pub seed: u64,
    pub role: TaskRole,
    pub rho: f64,
    pub generator: TaskShape,
}

impl TaskDescriptor {
    pub fn realize(&self) -> Result<Task> {
        let rng = RandomSource::new(self.seed);
        match self.role {
            TaskRole::Standalone => {
                let g = &self.generator;
                make_mlp_task(g.dim, g.hidden, g.classes, g.n_samples, &rng)
            }
            TaskRole::Source => Ok(gen_transfer_pair(&self.generator, self.rho, &rng)?.source),
            TaskRole::Target => Ok(gen_transfer_pair(&self.generator, self.rho, &rng)?.target),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    cols: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::invalid(format!("{} values do not form rows of width {cols}", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Features { cols, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Model {
    Quadratic { curvature: Vec<f64>, center: ParamVector },
    Linear { x: Features, y: Vec<f64> },
    Logistic { x: Features, y: Vec<f64> },
    Mlp { shape: MlpShape, x: Features, y: Vec<usize> },
}

/// A differentiable task. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    model: Model,
    descriptor: Option<TaskDescriptor>,
    generative: Option<GenerativeParams>,
}

/// Rows of a dataset selected for one gradient evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>) -> Self {
        Batch { indices }
    }

    /// Every row of an `n`-row dataset.
    pub fn full(n: usize) -> Self {
        Batch { indices: (0..n).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Epoch-wise batch order: one shuffled permutation per epoch, consumed in
/// consecutive chunks of `batch_size`. A trailing partial chunk is dropped.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    rng: RandomSource,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    /// `batch_size` is clamped to the dataset size. Datasets without rows
    /// (quadratic tasks) yield empty batches, which those tasks ignore.
    pub fn new(n: usize, batch_size: usize, rng: RandomSource) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(BatchSampler { n, batch_size: batch_size.min(n.max(1)), rng, order: Vec::new(), pos: 0 })
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.n == 0 {
            return Batch::new(Vec::new());
        }
        if self.order.is_empty() || self.pos + self.batch_size > self.n {
            self.order = self.rng.permutation(self.n);
            self.pos = 0;
        }
        let b = Batch::new(self.order[self.pos..self.pos + self.batch_size].to_vec());
        self.pos += self.batch_size;
        b
    }
}

fn check_batch(batch: &Batch, rows: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    if let Some(&i) = batch.indices.iter().find(|&&i| i >= rows) {
        return Err(Error::InvalidBatch(format!("row {i} out of range for {rows} rows")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Task {
    /// `loss = 0.5 (theta - c)^T A (theta - c)` with `A` symmetric positive definite.
    pub fn quadratic(curvature: Vec<f64>, center: ParamVector) -> Result<Self> {
        let d = center.len();
        check_len(d * d, curvature.len())?;
        for i in 0..d {
            if !(curvature[i * d + i] > 0.0) {
                return Err(Error::invalid(format!("curvature diagonal entry {i} is not positive")));
            }
            for j in 0..i {
                if (curvature[i * d + j] - curvature[j * d + i]).abs() > 1e-12 {
                    return Err(Error::invalid(format!("curvature not symmetric at ({i}, {j})")));
                }
            }
        }
        if !cholesky_ok(&curvature, d) {
            return Err(Error::invalid("curvature is not positive definite"));
        }
        Ok(Task { model: Model::Quadratic { curvature, center }, descriptor: None, generative: None })
    }

    /// Least squares `0.5 (w.x - y)^2`, i.e. a unit-variance Gaussian likelihood.
    pub fn linear_regression(x: Features, y: Vec<f64>) -> Result<Self> {
        check_len(x.rows(), y.len())?;
        Ok(Task { model: Model::Linear { x, y }, descriptor: None, generative: None })
    }

    /// Binary cross-entropy with labels in `{0, 1}`; no intercept.
    pub fn logistic_regression(x: Features, y: Vec<f64>) -> Result<Self> {
        check_len(x.rows(), y.len())?;
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("logistic labels must be 0 or 1"));
        }
        Ok(Task { model: Model::Logistic { x, y }, descriptor: None, generative: None })
    }

    pub fn mlp(shape: MlpShape, x: Features, y: Vec<usize>) -> Result<Self> {
        if shape.dim_in == 0 || shape.hidden == 0 || shape.classes == 0 {
            return Err(Error::invalid("mlp sizes must be >= 1"));
        }
        check_len(shape.dim_in, x.cols())?;
        check_len(x.rows(), y.len())?;
        if let Some(&c) = y.iter().find(|&&c| c >= shape.classes) {
            return Err(Error::invalid(format!("class label {c} out of range")));
        }
        Ok(Task { model: Model::Mlp { shape, x, y }, descriptor: None, generative: None })
    }

    pub(crate) fn with_provenance(mut self, descriptor: TaskDescriptor, generative: GenerativeParams) -> Self {
        self.descriptor = Some(descriptor);
        self.generative = Some(generative);
        self
    }

    pub fn kind(&self) -> TaskKind {
        match self.model {
            Model::Quadratic { .. } => TaskKind::Quadratic,
            Model::Linear { .. } => TaskKind::LinearRegression,
            Model::Logistic { .. } => TaskKind::LogisticRegression,
            Model::Mlp { .. } => TaskKind::Mlp,
        }
    }

    /// Parameter count `d`.
    pub fn dim(&self) -> usize {
        match &self.model {
            Model::Quadratic { center, .. } => center.len(),
            Model::Linear { x, .. } | Model::Logistic { x, .. } => x.cols(),
            Model::Mlp { shape, .. } => shape.param_count(),
        }
    }

    /// Dataset rows; zero for quadratic tasks.
    pub fn n_samples(&self) -> usize {
        match &self.model {
            Model::Quadratic { .. } => 0,
            Model::Linear { x, .. } | Model::Logistic { x, .. } | Model::Mlp { x, .. } => x.rows(),
        }
    }

    pub fn descriptor(&self) -> Option<&TaskDescriptor> {
        self.descriptor.as_ref()
    }

    /// Parameters the task was generated from (center/curvature, regression
    /// weights or teacher network), when generated.
    pub fn generative_params(&self) -> Option<&GenerativeParams> {
        self.generative.as_ref()
    }

    pub fn curvature(&self) -> Option<&[f64]> {
        match &self.model {
            Model::Quadratic { curvature, .. } => Some(curvature),
            _ => None,
        }
    }

    pub fn center(&self) -> Option<&ParamVector> {
        match &self.model {
            Model::Quadratic { center, .. } => Some(center),
            _ => None,
        }
    }

    pub fn full_batch(&self) -> Batch {
        Batch::full(self.n_samples())
    }

    /// Mean loss over `batch` (quadratic tasks ignore the batch).
    pub fn loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        check_len(self.dim(), theta.len())?;
        let th = theta.as_slice();
        match &self.model {
            Model::Quadratic { curvature, center } => {
                let diff: Vec<f64> = th.iter().zip(center).map(|(a, c)| a - c).collect();
                let ad = matvec(curvature, &diff);
                Ok(0.5 * dot(&diff, &ad))
            }
            Model::Linear { x, y } => {
                check_batch(batch, x.rows())?;
                let sum: f64 = batch.indices.iter().map(|&i| 0.5 * (dot(th, x.row(i)) - y[i]).powi(2)).sum();
                Ok(sum / batch.len() as f64)
            }
            Model::Logistic { x, y } => {
                check_batch(batch, x.rows())?;
                let sum: f64 = batch
                    .indices
                    .iter()
                    .map(|&i| {
                        let z = dot(th, x.row(i));
                        softplus(z) - y[i] * z
                    })
                    .sum();
                Ok(sum / batch.len() as f64)
            }
            Model::Mlp { shape, x, y } => {
                check_batch(batch, x.rows())?;
                let mut s = shape.scratch();
                let sum: f64 = batch
                    .indices
                    .iter()
                    .map(|&i| shape.sample_loss(th, x.row(i), y[i], &mut s.hidden, &mut s.probs))
                    .sum();
                Ok(sum / batch.len() as f64)
            }
        }
    }

    /// Mean loss over the whole dataset.
    pub fn full_loss(&self, theta: &ParamVector) -> Result<f64> {
        self.loss(theta, &self.full_batch())
    }

    /// Mean loss and its exact gradient.
    pub fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        check_len(self.dim(), theta.len())?;
        let th = theta.as_slice();
        let d = self.dim();
        let (loss, grad) = match &self.model {
            Model::Quadratic { curvature, center } => {
                let diff: Vec<f64> = th.iter().zip(center).map(|(a, c)| a - c).collect();
                let ad = matvec(curvature, &diff);
                (0.5 * dot(&diff, &ad), ad)
            }
            Model::Linear { x, y } => {
                check_batch(batch, x.rows())?;
                let inv = 1.0 / batch.len() as f64;
                let mut g = vec![0.0; d];
                let mut loss = 0.0;
                for &i in &batch.indices {
                    let xi = x.row(i);
                    let r = dot(th, xi) - y[i];
                    loss += 0.5 * r * r;
                    for (gk, xk) in g.iter_mut().zip(xi) {
                        *gk += r * xk * inv;
                    }
                }
                (loss * inv, g)
            }
            Model::Logistic { x, y } => {
                check_batch(batch, x.rows())?;
                let inv = 1.0 / batch.len() as f64;
                let mut g = vec![0.0; d];
                let mut loss = 0.0;
                for &i in &batch.indices {
                    let xi = x.row(i);
                    let z = dot(th, xi);
                    loss += softplus(z) - y[i] * z;
                    let r = crate::shifting::stable_sigmoid(z) - y[i];
                    for (gk, xk) in g.iter_mut().zip(xi) {
                        *gk += r * xk * inv;
                    }
                }
                (loss * inv, g)
            }
            Model::Mlp { shape, x, y } => {
                check_batch(batch, x.rows())?;
                let inv = 1.0 / batch.len() as f64;
                let mut g = vec![0.0; d];
                let mut s = shape.scratch();
                let mut loss = 0.0;
                for &i in &batch.indices {
                    loss += shape.accumulate_grad(th, x.row(i), y[i], inv, &mut g, &mut s);
                }
                (loss * inv, g)
            }
        };
        if !loss.is_finite() {
            return Err(Error::Numeric { step: 0, what: "task loss".into() });
        }
        Ok((loss, ParamVector::from_computed(grad, 0, "task gradient")?))
    }

    /// Gradient of the per-sample log-likelihood `log p(y_i | x_i, theta)`.
    pub fn sample_log_likelihood_grad(&self, theta: &ParamVector, row: usize) -> Result<Vec<f64>> {
        check_len(self.dim(), theta.len())?;
        if matches!(self.model, Model::Quadratic { .. }) {
            return Err(Error::UnsupportedTask("quadratic tasks define no likelihood".into()));
        }
        let (_, g) = self.loss_and_grad(theta, &Batch::new(vec![row]))?;
        // negative log-likelihood is the per-sample loss
        Ok(g.iter().map(|v| -v).collect())
    }
}

fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d).map(|i| dot(&a[i * d..(i + 1) * d], x)).collect()
}

fn cholesky_ok(a: &[f64], d: usize) -> bool {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if v <= 0.0 {
                    return false;
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    true
}

/// Central differences `(L(theta + h_i e_i) - L(theta - h_i e_i)) / (2 h_i)`
/// with `h_i = h * max(1, |theta_i|)`.
pub fn finite_diff_grad(task: &Task, theta: &ParamVector, batch: &Batch, h: f64) -> Result<ParamVector> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    check_len(task.dim(), theta.len())?;
    let mut probe = theta.as_slice().to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let hi = h * theta[i].abs().max(1.0);
        let orig = probe[i];
        probe[i] = orig + hi;
        let up = task.loss(&ParamVector::from_vec_unchecked(probe.clone()), batch)?;
        probe[i] = orig - hi;
        let down = task.loss(&ParamVector::from_vec_unchecked(probe.clone()), batch)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * hi));
    }
    ParamVector::from_computed(out, 0, "finite-difference gradient")
}
