//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use recadam::numkit::{ParamVector, RandomSource};
use recadam::optim::{AdamConfig, AdamState, Optimizer, OptimizerKind, StepInput};
use recadam::tasks::{Features, Task};

pub fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

/// Adam written as plain scalar arithmetic, independent of the library:
/// one coordinate, gradient supplied by `grad(theta)`.
pub fn scalar_adam_oracle(theta0: f64, cfg: &AdamConfig, steps: usize, grad: impl Fn(f64) -> f64) -> Vec<f64> {
    let (mut theta, mut m, mut v) = (theta0, 0.0f64, 0.0f64);
    let (mut b1t, mut b2t) = (1.0f64, 1.0f64);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let g = grad(theta);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        let m_hat = m / (1.0 - b1t);
        let v_hat = v / (1.0 - b2t);
        theta -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps);
        out.push(theta);
    }
    out
}

/// Penalty-attributable displacement: the step taken with `penalty_grad`
/// minus the step taken with a zero penalty gradient from the same state.
pub fn penalty_displacement(
    opt: &Optimizer,
    theta: &ParamVector,
    state: &AdamState,
    eta: f64,
    grad: &ParamVector,
    lambda: f64,
    penalty_grad: &ParamVector,
) -> Vec<f64> {
    let zero = ParamVector::zeros(theta.len());
    let (with, _) = opt.step(theta, state, eta, StepInput::recall(grad, lambda, penalty_grad)).unwrap();
    let (without, _) = opt.step(theta, state, eta, StepInput::recall(grad, lambda, &zero)).unwrap();
    // displacement = theta_next - theta; the difference of the two displacements
    without.iter().zip(with.iter()).map(|(a, b)| a - b).collect()
}

pub fn optimizer(kind: OptimizerKind, alpha: f64) -> Optimizer {
    Optimizer::new(kind, AdamConfig::with_alpha(alpha)).unwrap()
}

/// `y_i = mu + N(0, 1)` with a constant unit feature: the Gaussian-mean model.
pub fn gaussian_mean_task(mu: f64, n: usize, rng: &mut RandomSource) -> Task {
    let x = Features::new(1, vec![1.0; n]).unwrap();
    let y = (0..n).map(|_| mu + rng.standard_normal()).collect();
    Task::linear_regression(x, y).unwrap()
}

pub fn median(v: &[f64]) -> f64 {
    recadam::harness::report::median(v)
}
