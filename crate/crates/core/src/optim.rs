//! Adam-family steppers.
//!
//! Every stepper is a pure transition `(theta, state) -> (theta', state')`.
//! The step counter is incremented before use, so the first call sees `t = 1`.
//! `eps` is added outside the square root: `m_hat / (sqrt(v_hat) + eps)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numkit::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { alpha: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    /// Default moments (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`) with the given learning rate.
    pub fn with_alpha(alpha: f64) -> Self {
        AdamConfig { alpha, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    t: u64,
    m: ParamVector,
    v: ParamVector,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState { t: 0, m: ParamVector::zeros(dim), v: ParamVector::zeros(dim) }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn m(&self) -> &ParamVector {
        &self.m
    }

    pub fn v(&self) -> &ParamVector {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Adamw,
    Recadam,
    RecadamCoupled,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adamw => "adamw",
            OptimizerKind::Recadam => "recadam",
            OptimizerKind::RecadamCoupled => "recadam-coupled",
        }
    }

    /// Whether the stepper consumes `lambda(t)` and a penalty gradient.
    pub fn uses_recall(self) -> bool {
        matches!(self, OptimizerKind::Recadam | OptimizerKind::RecadamCoupled)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::Adamw),
            "recadam" => Ok(OptimizerKind::Recadam),
            "recadam-coupled" => Ok(OptimizerKind::RecadamCoupled),
            other => Err(Error::invalid(format!("unknown optimizer kind '{other}'"))),
        }
    }
}

/// Per-step gradient information handed to a stepper.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    pub grad: &'a ParamVector,
    /// Mixture weight; `1.0` for the plain steppers.
    pub lambda_t: f64,
    pub penalty_grad: Option<&'a ParamVector>,
}

impl<'a> StepInput<'a> {
    pub fn plain(grad: &'a ParamVector) -> Self {
        StepInput { grad, lambda_t: 1.0, penalty_grad: None }
    }

    pub fn recall(grad: &'a ParamVector, lambda_t: f64, penalty_grad: &'a ParamVector) -> Self {
        StepInput { grad, lambda_t, penalty_grad: Some(penalty_grad) }
    }
}

/// Moment update shared by all variants: returns the new state and the
/// bias-correction denominators `(1 - beta1^t, 1 - beta2^t)`.
fn advance(state: &AdamState, cfg: &AdamConfig, g: &[f64]) -> Result<(AdamState, f64, f64)> {
    let t = state.t + 1;
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(g)
        .map(|(m, g)| cfg.beta1 * m + (1.0 - cfg.beta1) * g)
        .collect();
    let v: Vec<f64> = state
        .v
        .iter()
        .zip(g)
        .map(|(v, g)| cfg.beta2 * v + (1.0 - cfg.beta2) * g * g)
        .collect();
    let exp = t.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(exp);
    let bc2 = 1.0 - cfg.beta2.powi(exp);
    let next = AdamState {
        t,
        m: ParamVector::from_computed(m, t, "first moment")?,
        v: ParamVector::from_computed(v, t, "second moment")?,
    };
    Ok((next, bc1, bc2))
}

/// `alpha * m_hat / (sqrt(v_hat) + eps)` for one coordinate.
#[inline]
fn adaptive_term(cfg: &AdamConfig, m: f64, v: f64, bc1: f64, bc2: f64) -> f64 {
    let m_hat = m / bc1;
    let v_hat = v / bc2;
    cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps)
}

fn check_common(theta: &ParamVector, state: &AdamState, grad: &ParamVector, eta_t: f64) -> Result<()> {
    check_len(theta.len(), state.dim())?;
    check_len(theta.len(), grad.len())?;
    if !eta_t.is_finite() {
        return Err(Error::invalid("schedule multiplier must be finite"));
    }
    Ok(())
}

fn check_recall<'a>(theta: &ParamVector, lambda_t: f64, penalty_grad: Option<&'a ParamVector>) -> Result<&'a ParamVector> {
    let p = penalty_grad.ok_or_else(|| Error::invalid("penalty gradient required"))?;
    check_len(theta.len(), p.len())?;
    if !(0.0..=1.0).contains(&lambda_t) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda_t}")));
    }
    Ok(p)
}

/// Vanilla Adam.
pub fn adam_step(
    theta: &ParamVector,
    state: &AdamState,
    cfg: &AdamConfig,
    eta_t: f64,
    grad: &ParamVector,
) -> Result<(ParamVector, AdamState)> {
    check_common(theta, state, grad, eta_t)?;
    let (next, bc1, bc2) = advance(state, cfg, grad.as_slice())?;
    let out: Vec<f64> = theta
        .iter()
        .zip(next.m.iter().zip(next.v.iter()))
        .map(|(th, (m, v))| th - eta_t * adaptive_term(cfg, *m, *v, bc1, bc2))
        .collect();
    Ok((ParamVector::from_computed(out, next.t, "parameters")?, next))
}

/// Adam with decoupled weight decay: `theta' = theta - eta (adam + wd * theta)`.
pub fn adamw_step(
    theta: &ParamVector,
    state: &AdamState,
    cfg: &AdamConfig,
    eta_t: f64,
    grad: &ParamVector,
    weight_decay: f64,
) -> Result<(ParamVector, AdamState)> {
    if !(weight_decay.is_finite() && weight_decay >= 0.0) {
        return Err(Error::invalid(format!("weight decay must be >= 0, got {weight_decay}")));
    }
    check_common(theta, state, grad, eta_t)?;
    let (next, bc1, bc2) = advance(state, cfg, grad.as_slice())?;
    let out: Vec<f64> = theta
        .iter()
        .zip(next.m.iter().zip(next.v.iter()))
        .map(|(th, (m, v))| th - eta_t * (adaptive_term(cfg, *m, *v, bc1, bc2) + weight_decay * th))
        .collect();
    Ok((ParamVector::from_computed(out, next.t, "parameters")?, next))
}

/// Penalty folded into the gradient before the moments:
/// `g = lambda * grad + (1 - lambda) * penalty_grad`, then a plain Adam update.
pub fn coupled_recadam_step(
    theta: &ParamVector,
    state: &AdamState,
    cfg: &AdamConfig,
    eta_t: f64,
    grad: &ParamVector,
    lambda_t: f64,
    penalty_grad: Option<&ParamVector>,
) -> Result<(ParamVector, AdamState)> {
    check_common(theta, state, grad, eta_t)?;
    let p = check_recall(theta, lambda_t, penalty_grad)?;
    let g: Vec<f64> = grad
        .iter()
        .zip(p)
        .map(|(g, p)| lambda_t * g + (1.0 - lambda_t) * p)
        .collect();
    let (next, bc1, bc2) = advance(state, cfg, &g)?;
    let out: Vec<f64> = theta
        .iter()
        .zip(next.m.iter().zip(next.v.iter()))
        .map(|(th, (m, v))| th - eta_t * adaptive_term(cfg, *m, *v, bc1, bc2))
        .collect();
    Ok((ParamVector::from_computed(out, next.t, "parameters")?, next))
}

/// RecAdam: moments see only the raw target gradient; the penalty and the
/// mixture weight act outside the adaptive term:
/// `theta' = theta - eta (lambda * alpha m_hat / (sqrt(v_hat) + eps) + (1 - lambda) * penalty_grad)`.
pub fn recadam_step(
    theta: &ParamVector,
    state: &AdamState,
    cfg: &AdamConfig,
    eta_t: f64,
    grad: &ParamVector,
    lambda_t: f64,
    penalty_grad: Option<&ParamVector>,
) -> Result<(ParamVector, AdamState)> {
    check_common(theta, state, grad, eta_t)?;
    let p = check_recall(theta, lambda_t, penalty_grad)?;
    let (next, bc1, bc2) = advance(state, cfg, grad.as_slice())?;
    let recall = 1.0 - lambda_t;
    let out: Vec<f64> = theta
        .iter()
        .zip(next.m.iter().zip(next.v.iter()))
        .zip(p)
        .map(|((th, (m, v)), p)| {
            th - eta_t * (lambda_t * adaptive_term(cfg, *m, *v, bc1, bc2) + recall * p)
        })
        .collect();
    Ok((ParamVector::from_computed(out, next.t, "parameters")?, next))
}

/// A configured stepper of any kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub config: AdamConfig,
    pub weight_decay: f64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer { kind, config, weight_decay: 0.0 })
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Result<Self> {
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::invalid(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        self.weight_decay = weight_decay;
        Ok(self)
    }

    pub fn step(
        &self,
        theta: &ParamVector,
        state: &AdamState,
        eta_t: f64,
        input: StepInput<'_>,
    ) -> Result<(ParamVector, AdamState)> {
        let cfg = &self.config;
        match self.kind {
            OptimizerKind::Adam => adam_step(theta, state, cfg, eta_t, input.grad),
            OptimizerKind::Adamw => adamw_step(theta, state, cfg, eta_t, input.grad, self.weight_decay),
            OptimizerKind::Recadam => {
                recadam_step(theta, state, cfg, eta_t, input.grad, input.lambda_t, input.penalty_grad)
            }
            OptimizerKind::RecadamCoupled => {
                coupled_recadam_step(theta, state, cfg, eta_t, input.grad, input.lambda_t, input.penalty_grad)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    LinearWarmupConstant,
    LinearWarmupLinearDecay,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::LinearWarmupConstant => "linear-warmup-constant",
            ScheduleKind::LinearWarmupLinearDecay => "linear-warmup-linear-decay",
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ScheduleKind::Constant),
            "linear-warmup-constant" => Ok(ScheduleKind::LinearWarmupConstant),
            "linear-warmup-linear-decay" => Ok(ScheduleKind::LinearWarmupLinearDecay),
            other => Err(Error::invalid(format!("unknown schedule kind '{other}'"))),
        }
    }
}

/// Step-size multiplier `eta_t` in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMultiplier {
    pub kind: ScheduleKind,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl ScheduleMultiplier {
    pub fn constant() -> Self {
        ScheduleMultiplier { kind: ScheduleKind::Constant, warmup_steps: 0, total_steps: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ScheduleKind::LinearWarmupLinearDecay && self.total_steps <= self.warmup_steps {
            return Err(Error::invalid(format!(
                "decay schedule needs total_steps ({}) > warmup_steps ({})",
                self.total_steps, self.warmup_steps
            )));
        }
        Ok(())
    }

    pub fn at(&self, t: u64) -> Result<f64> {
        schedule_multiplier(self, t)
    }
}

pub fn schedule_multiplier(sched: &ScheduleMultiplier, t: u64) -> Result<f64> {
    if t < 1 {
        return Err(Error::invalid("schedule multiplier: step counter starts at 1"));
    }
    sched.validate()?;
    let warm = |w: u64| if w == 0 { 1.0 } else { (t as f64 / w as f64).min(1.0) };
    Ok(match sched.kind {
        ScheduleKind::Constant => 1.0,
        ScheduleKind::LinearWarmupConstant => warm(sched.warmup_steps),
        ScheduleKind::LinearWarmupLinearDecay => {
            if t <= sched.warmup_steps {
                warm(sched.warmup_steps)
            } else {
                let remaining = sched.total_steps.saturating_sub(t) as f64;
                (remaining / (sched.total_steps - sched.warmup_steps) as f64).clamp(0.0, 1.0)
            }
        }
    })
}
