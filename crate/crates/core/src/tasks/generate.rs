//! Synthetic source/target task pairs.
//!
//! Streams used (children of the seed): `source` and `independent` draw
//! generative parameters; `source-data` and `target-data` draw datasets. The
//! target's parameters are `rho * source + (1 - rho) * independent`,
//! elementwise. Only the seed matters, never the parent stream's position.

use serde::{Deserialize, Serialize};

use super::{Features, MlpShape, Task, TaskDescriptor, TaskKind, TaskRole};
use crate::error::{Error, Result};
use crate::numkit::{ParamVector, RandomSource};

/// Size parameters for a generated task. `dim` is the parameter count for
/// quadratic tasks, the feature count for regression tasks and the input
/// width for the MLP; `hidden`/`classes` apply to the MLP only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShape {
    pub kind: TaskKind,
    pub dim: usize,
    #[serde(default)]
    pub hidden: usize,
    #[serde(default)]
    pub classes: usize,
    #[serde(default)]
    pub n_samples: usize,
}

impl TaskShape {
    pub fn quadratic(dim: usize) -> Self {
        TaskShape { kind: TaskKind::Quadratic, dim, hidden: 0, classes: 0, n_samples: 0 }
    }

    pub fn linear_regression(dim: usize, n_samples: usize) -> Self {
        TaskShape { kind: TaskKind::LinearRegression, dim, hidden: 0, classes: 0, n_samples }
    }

    pub fn logistic_regression(dim: usize, n_samples: usize) -> Self {
        TaskShape { kind: TaskKind::LogisticRegression, dim, hidden: 0, classes: 0, n_samples }
    }

    pub fn mlp(dim_in: usize, hidden: usize, classes: usize, n_samples: usize) -> Self {
        TaskShape { kind: TaskKind::Mlp, dim: dim_in, hidden, classes, n_samples }
    }

    pub fn mlp_shape(&self) -> MlpShape {
        MlpShape { dim_in: self.dim, hidden: self.hidden, classes: self.classes }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            TaskKind::Mlp => self.mlp_shape().param_count(),
            _ => self.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("task dim must be >= 1"));
        }
        match self.kind {
            TaskKind::Quadratic => Ok(()),
            TaskKind::Mlp if self.hidden == 0 || self.classes == 0 => {
                Err(Error::invalid("mlp hidden and classes must be >= 1"))
            }
            _ if self.n_samples == 0 => Err(Error::invalid("n_samples must be >= 1")),
            _ => Ok(()),
        }
    }
}

/// Parameters a task's data (or bowl) is generated from.
#[derive(Clone, Debug, PartialEq)]
pub enum GenerativeParams {
    /// `A = Q diag(l) Q^T` (row-major) and center `c`.
    Quadratic { curvature: Vec<f64>, center: Vec<f64> },
    /// Regression weights or flattened teacher-network parameters.
    Weights(Vec<f64>),
}

impl GenerativeParams {
    fn mix(&self, other: &GenerativeParams, rho: f64) -> GenerativeParams {
        let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(a, b)| rho * a + (1.0 - rho) * b).collect()
        };
        match (self, other) {
            (
                GenerativeParams::Quadratic { curvature: ca, center: xa },
                GenerativeParams::Quadratic { curvature: cb, center: xb },
            ) => GenerativeParams::Quadratic { curvature: lerp(ca, cb), center: lerp(xa, xb) },
            (GenerativeParams::Weights(a), GenerativeParams::Weights(b)) => GenerativeParams::Weights(lerp(a, b)),
            _ => unreachable!("mixing parameters of different task kinds"),
        }
    }
}

// Random rotation from Gram-Schmidt on a Gaussian matrix (rows are orthonormal).
fn random_rotation(d: usize, rng: &mut RandomSource) -> Vec<f64> {
    let mut q = rng.normal_vec(d * d, 1.0);
    for i in 0..d {
        for j in 0..i {
            let proj: f64 = (0..d).map(|k| q[i * d + k] * q[j * d + k]).sum();
            for k in 0..d {
                q[i * d + k] -= proj * q[j * d + k];
            }
        }
        let norm = (0..d).map(|k| q[i * d + k].powi(2)).sum::<f64>().sqrt();
        for k in 0..d {
            q[i * d + k] /= norm;
        }
    }
    q
}

/// Draws generative parameters for `shape`.
///
/// * quadratic: `A = Q diag(l) Q^T` with `l_i` log-uniform in `[0.1, 10]`, `c ~ N(0, I)`;
/// * linear regression: `w ~ N(0, I)`;
/// * logistic regression: `w ~ N(0, 4/d I)`;
/// * mlp: teacher with `W1 ~ N(0, 2.25/dim_in)`, `b1 ~ N(0, 0.25)`,
///   `W2 ~ N(0, 16/hidden)`, `b2 ~ N(0, 0.25)`.
pub fn draw_generative_params(shape: &TaskShape, rng: &mut RandomSource) -> GenerativeParams {
    let d = shape.dim;
    match shape.kind {
        TaskKind::Quadratic => {
            let q = random_rotation(d, rng);
            let eig: Vec<f64> = (0..d).map(|_| 10f64.powf(2.0 * rng.uniform() - 1.0)).collect();
            let mut a = vec![0.0; d * d];
            for i in 0..d {
                for j in i..d {
                    // Q^T diag(l) Q, using rows of q as eigenvectors
                    let v: f64 = (0..d).map(|k| q[k * d + i] * eig[k] * q[k * d + j]).sum();
                    a[i * d + j] = v;
                    a[j * d + i] = v;
                }
            }
            let center = rng.normal_vec(d, 1.0);
            GenerativeParams::Quadratic { curvature: a, center }
        }
        TaskKind::LinearRegression => GenerativeParams::Weights(rng.normal_vec(d, 1.0)),
        TaskKind::LogisticRegression => GenerativeParams::Weights(rng.normal_vec(d, 2.0 / (d as f64).sqrt())),
        TaskKind::Mlp => {
            let (h, c) = (shape.hidden, shape.classes);
            let mut w = rng.normal_vec(h * d, 1.5 / (d as f64).sqrt());
            w.extend(rng.normal_vec(h, 0.5));
            w.extend(rng.normal_vec(c * h, 4.0 / (h as f64).sqrt()));
            w.extend(rng.normal_vec(c, 0.5));
            GenerativeParams::Weights(w)
        }
    }
}

fn sample_categorical(probs: &[f64], rng: &mut RandomSource) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn build_task(shape: &TaskShape, params: &GenerativeParams, data_rng: &mut RandomSource) -> Result<Task> {
    let (d, n) = (shape.dim, shape.n_samples);
    match (shape.kind, params) {
        (TaskKind::Quadratic, GenerativeParams::Quadratic { curvature, center }) => {
            Task::quadratic(curvature.clone(), ParamVector::new(center.clone())?)
        }
        (TaskKind::LinearRegression, GenerativeParams::Weights(w)) => {
            let mut xs = Vec::with_capacity(n * d);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x = data_rng.normal_vec(d, 1.0);
                let noise = data_rng.standard_normal();
                ys.push(w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + noise);
                xs.extend(x);
            }
            Task::linear_regression(Features::new(d, xs)?, ys)
        }
        (TaskKind::LogisticRegression, GenerativeParams::Weights(w)) => {
            let mut xs = Vec::with_capacity(n * d);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x = data_rng.normal_vec(d, 1.0);
                let z: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
                let p = crate::shifting::stable_sigmoid(z);
                ys.push(if data_rng.uniform() < p { 1.0 } else { 0.0 });
                xs.extend(x);
            }
            Task::logistic_regression(Features::new(d, xs)?, ys)
        }
        (TaskKind::Mlp, GenerativeParams::Weights(w)) => {
            let net = shape.mlp_shape();
            let mut scratch = net.scratch();
            let mut xs = Vec::with_capacity(n * d);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x = data_rng.normal_vec(d, 1.0);
                net.sample_loss(w, &x, 0, &mut scratch.hidden, &mut scratch.probs);
                ys.push(sample_categorical(&scratch.probs, data_rng));
                xs.extend(x);
            }
            Task::mlp(net, Features::new(d, xs)?, ys)
        }
        _ => unreachable!("generative parameters do not match task kind"),
    }
}

/// Generation recipe for a transfer pair; its JSON form replays the pair exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub shape: TaskShape,
    pub rho: f64,
    pub seed: u64,
    /// Target training rows; `None` uses `shape.n_samples`.
    #[serde(default)]
    pub target_samples: Option<usize>,
}

impl TransferSpec {
    pub fn new(shape: TaskShape, rho: f64, seed: u64) -> Self {
        TransferSpec { shape, rho, seed, target_samples: None }
    }

    pub fn generate(&self) -> Result<TransferPair> {
        let target_n = self.target_samples.unwrap_or(self.shape.n_samples);
        transfer_pair(&self.shape, self.rho, target_n, &RandomSource::new(self.seed))
    }

    /// Fresh rows from the target's generative model, disjoint in randomness
    /// from the training rows. Quadratic targets are returned unchanged.
    pub fn heldout_target(&self, pair: &TransferPair, n_samples: usize) -> Result<Task> {
        heldout_like(&pair.target, n_samples, &RandomSource::new(self.seed).child("target-eval"))
    }
}

/// Another dataset drawn from `task`'s generative model.
pub fn heldout_like(task: &Task, n_samples: usize, rng: &RandomSource) -> Result<Task> {
    let (Some(desc), Some(params)) = (task.descriptor(), task.generative_params()) else {
        return Err(Error::invalid("task has no generative description"));
    };
    if task.kind() == TaskKind::Quadratic {
        return Ok(task.clone());
    }
    let shape = TaskShape { n_samples, ..desc.generator };
    shape.validate()?;
    let mut desc = desc.clone();
    desc.generator = shape;
    Ok(build_task(&shape, params, &mut rng.clone())?.with_provenance(desc, params.clone()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferPair {
    pub source: Task,
    pub target: Task,
    pub rho: f64,
}

/// Source/target pair with relatedness `rho` in `[0, 1]`. Deterministic in
/// `(shape, rho, rng.seed())`.
pub fn gen_transfer_pair(shape: &TaskShape, rho: f64, rng: &RandomSource) -> Result<TransferPair> {
    transfer_pair(shape, rho, shape.n_samples, rng)
}

fn transfer_pair(shape: &TaskShape, rho: f64, target_n: usize, rng: &RandomSource) -> Result<TransferPair> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("relatedness rho must lie in [0, 1], got {rho}")));
    }
    shape.validate()?;
    let target_shape = TaskShape { n_samples: target_n, ..*shape };
    target_shape.validate()?;
    let src = draw_generative_params(shape, &mut rng.child("source"));
    let indep = draw_generative_params(shape, &mut rng.child("independent"));
    let tgt = src.mix(&indep, rho);
    let descriptor = |role, generator| TaskDescriptor {
        kind: shape.kind,
        dim: shape.param_count(),
        seed: rng.seed(),
        role,
        rho,
        generator,
    };
    let source = build_task(shape, &src, &mut rng.child("source-data"))?
        .with_provenance(descriptor(TaskRole::Source, *shape), src);
    let target = build_task(&target_shape, &tgt, &mut rng.child("target-data"))?
        .with_provenance(descriptor(TaskRole::Target, target_shape), tgt);
    Ok(TransferPair { source, target, rho })
}

/// Standalone classification task labelled by a random teacher of the same
/// architecture. Deterministic in `rng.seed()`.
pub fn make_mlp_task(dim_in: usize, hidden: usize, classes: usize, n_samples: usize, rng: &RandomSource) -> Result<Task> {
    if dim_in == 0 || hidden == 0 || classes == 0 || n_samples == 0 {
        return Err(Error::invalid("mlp sizes must be >= 1"));
    }
    let shape = TaskShape::mlp(dim_in, hidden, classes, n_samples);
    let teacher = draw_generative_params(&shape, &mut rng.child("teacher"));
    let descriptor = TaskDescriptor {
        kind: TaskKind::Mlp,
        dim: shape.param_count(),
        seed: rng.seed(),
        role: TaskRole::Standalone,
        rho: 1.0,
        generator: shape,
    };
    Ok(build_task(&shape, &teacher, &mut rng.child("data"))?.with_provenance(descriptor, teacher))
}
