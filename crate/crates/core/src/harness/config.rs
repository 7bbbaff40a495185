//! Flat `key=value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys and malformed values are hard errors. Every key has a default
//! (see [`ExperimentConfig::default`]), so a file only lists what it changes.
//!
//! | key | meaning |
//! |-----|---------|
//! | `output_dir` | directory for checkpoints, traces and reports |
//! | `seeds` | comma-separated fine-tuning run seeds |
//! | `transfer.kind` | `quadratic`, `linear-regression`, `logistic-regression`, `mlp-1h` |
//! | `transfer.dim` | parameter count (quadratic), feature count (regression) or MLP input width |
//! | `transfer.hidden`, `transfer.classes` | MLP sizes |
//! | `transfer.n_samples` | source rows (and target rows unless overridden) |
//! | `transfer.target_samples` | target training rows; `0` means `transfer.n_samples` |
//! | `transfer.eval_samples` | held-out target rows for evaluation; `0` evaluates on the training rows |
//! | `transfer.rho`, `transfer.seed` | relatedness and generation seed |
//! | `pretrain.steps`, `pretrain.batch_size` | source training budget |
//! | `pretrain.optimizer.{alpha,beta1,beta2,eps}` | source Adam settings |
//! | `finetune.steps`, `finetune.batch_size` | target training budget |
//! | `finetune.optimizer.kind` | `adam`, `adamw`, `recadam`, `recadam-coupled` |
//! | `finetune.optimizer.{alpha,beta1,beta2,eps,weight_decay}` | target optimizer settings |
//! | `finetune.init` | `random` or `pretrained` |
//! | `finetune.schedule.{kind,warmup_steps,total_steps}` | step-size multiplier; `total_steps=0` means `finetune.steps` |
//! | `penalty.kind` | `none`, `isotropic`, `diagonal-fisher` |
//! | `penalty.gamma` | isotropic coefficient |
//! | `penalty.fisher_samples` | rows used to estimate the Fisher diagonal |
//! | `penalty.scale_by_alpha` | multiply the decoupled penalty step by `alpha` (see below) |
//! | `shifting.k`, `shifting.t0` | annealing rate and midpoint of `lambda(t)` |
//! | `threshold.tau` | absolute loss threshold; `0` derives it from a reference run |
//! | `threshold.factor` | multiplier on the reference run's best loss |
//! | `threshold.reference_steps` | reference-run length; `0` means `2 * finetune.steps` |
//!
//! With `penalty.scale_by_alpha=true` (the default) the harness hands RecAdam
//! `alpha * grad(penalty)` as its penalty gradient, so the recall step is
//! `eta (1 - lambda) alpha gamma (theta - theta*)`. With `gamma = 5000` the
//! unscaled step would overshoot `theta*` by a factor of thousands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, OptimizerKind, ScheduleKind, ScheduleMultiplier};
use crate::recall::PenaltyKind;
use crate::shifting::AnnealSchedule;
use crate::tasks::{TaskKind, TaskShape, TransferSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InitMode {
    Random,
    Pretrained,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Random => "random",
            InitMode::Pretrained => "pretrained",
        }
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMode::Random),
            "pretrained" => Ok(InitMode::Pretrained),
            other => Err(Error::config(format!("unknown init mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub weight_decay: f64,
    pub init: InitMode,
    pub schedule: ScheduleMultiplier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub gamma: f64,
    pub fisher_samples: usize,
    pub scale_by_alpha: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSpec {
    /// Absolute threshold; `None` derives it from a reference run.
    pub tau: Option<f64>,
    pub factor: f64,
    /// `None` means twice the fine-tuning budget.
    pub reference_steps: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub transfer: TransferSpec,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub penalty: PenaltySpec,
    pub shifting: AnnealSchedule,
    pub threshold: ThresholdSpec,
    /// Held-out target rows scored at the end of each run.
    pub eval_samples: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// The reference MLP transfer fixture.
    fn default() -> Self {
        ExperimentConfig {
            transfer: TransferSpec {
                target_samples: Some(50),
                ..TransferSpec::new(TaskShape::mlp(10, 16, 3, 1000), 0.7, 1)
            },
            pretrain: PretrainConfig { steps: 1000, batch_size: 32, optimizer: AdamConfig::with_alpha(0.01) },
            finetune: FinetuneConfig {
                steps: 2000,
                batch_size: 16,
                optimizer: OptimizerKind::Recadam,
                adam: AdamConfig::with_alpha(2e-4),
                weight_decay: 0.0,
                init: InitMode::Random,
                schedule: ScheduleMultiplier::constant(),
            },
            penalty: PenaltySpec {
                kind: PenaltyKind::Isotropic,
                gamma: crate::recall::DEFAULT_GAMMA,
                fisher_samples: 1000,
                scale_by_alpha: true,
            },
            shifting: AnnealSchedule { k: 0.1, t0: 250 },
            threshold: ThresholdSpec { tau: None, factor: 1.10, reference_steps: Some(1500) },
            eval_samples: 1000,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(format!("{key}: empty list")));
    }
    Ok(items)
}

/// `key=value` pairs in file order, with line numbers for error messages.
pub(crate) fn parse_assignments(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value", no + 1)))?;
        out.push((no + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (line, key, value) in parse_assignments(text)? {
            cfg.set(&key, &value).map_err(|e| match e {
                Error::Config(msg) => Error::config(format!("line {line}: {msg}")),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::parse(&text)
    }

    /// Applies one assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let shape = &mut self.transfer.shape;
        let ft = &mut self.finetune;
        match key {
            "output_dir" => self.output_dir = PathBuf::from(v),
            "seeds" => self.seeds = parse_list(key, v)?,
            "transfer.kind" => shape.kind = parse::<TaskKind>(key, v)?,
            "transfer.dim" => shape.dim = parse(key, v)?,
            "transfer.hidden" => shape.hidden = parse(key, v)?,
            "transfer.classes" => shape.classes = parse(key, v)?,
            "transfer.n_samples" => shape.n_samples = parse(key, v)?,
            "transfer.target_samples" => {
                let n: usize = parse(key, v)?;
                self.transfer.target_samples = (n != 0).then_some(n);
            }
            "transfer.eval_samples" => self.eval_samples = parse(key, v)?,
            "transfer.rho" => self.transfer.rho = parse(key, v)?,
            "transfer.seed" => self.transfer.seed = parse(key, v)?,
            "pretrain.steps" => self.pretrain.steps = parse(key, v)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse(key, v)?,
            "pretrain.optimizer.alpha" => self.pretrain.optimizer.alpha = parse(key, v)?,
            "pretrain.optimizer.beta1" => self.pretrain.optimizer.beta1 = parse(key, v)?,
            "pretrain.optimizer.beta2" => self.pretrain.optimizer.beta2 = parse(key, v)?,
            "pretrain.optimizer.eps" => self.pretrain.optimizer.eps = parse(key, v)?,
            "finetune.steps" => ft.steps = parse(key, v)?,
            "finetune.batch_size" => ft.batch_size = parse(key, v)?,
            "finetune.optimizer.kind" => ft.optimizer = parse::<OptimizerKind>(key, v)?,
            "finetune.optimizer.alpha" => ft.adam.alpha = parse(key, v)?,
            "finetune.optimizer.beta1" => ft.adam.beta1 = parse(key, v)?,
            "finetune.optimizer.beta2" => ft.adam.beta2 = parse(key, v)?,
            "finetune.optimizer.eps" => ft.adam.eps = parse(key, v)?,
            "finetune.optimizer.weight_decay" => ft.weight_decay = parse(key, v)?,
            "finetune.init" => ft.init = v.parse()?,
            "finetune.schedule.kind" => ft.schedule.kind = parse::<ScheduleKind>(key, v)?,
            "finetune.schedule.warmup_steps" => ft.schedule.warmup_steps = parse(key, v)?,
            "finetune.schedule.total_steps" => ft.schedule.total_steps = parse(key, v)?,
            "penalty.kind" => self.penalty.kind = parse::<PenaltyKind>(key, v)?,
            "penalty.gamma" => self.penalty.gamma = parse(key, v)?,
            "penalty.fisher_samples" => self.penalty.fisher_samples = parse(key, v)?,
            "penalty.scale_by_alpha" => self.penalty.scale_by_alpha = parse_bool(key, v)?,
            "shifting.k" => self.shifting.k = parse(key, v)?,
            "shifting.t0" => self.shifting.t0 = parse(key, v)?,
            "threshold.tau" => {
                let tau: f64 = parse(key, v)?;
                self.threshold.tau = (tau != 0.0).then_some(tau);
            }
            "threshold.factor" => self.threshold.factor = parse(key, v)?,
            "threshold.reference_steps" => {
                let n: u64 = parse(key, v)?;
                self.threshold.reference_steps = (n != 0).then_some(n);
            }
            other => return Err(Error::config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        if self.pretrain.steps == 0 {
            return Err(Error::config("pretrain.steps must be >= 1"));
        }
        if self.finetune.steps == 0 {
            return Err(Error::config("finetune.steps must be >= 1"));
        }
        if self.pretrain.batch_size == 0 || self.finetune.batch_size == 0 {
            return Err(Error::config("batch sizes must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.transfer.rho) {
            return Err(Error::config("transfer.rho must lie in [0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if !(self.penalty.gamma.is_finite() && self.penalty.gamma >= 0.0) {
            return Err(Error::config("penalty.gamma must be >= 0"));
        }
        if self.penalty.kind == PenaltyKind::DiagonalFisher && self.penalty.fisher_samples == 0 {
            return Err(Error::config("penalty.fisher_samples must be >= 1"));
        }
        if !(self.finetune.weight_decay.is_finite() && self.finetune.weight_decay >= 0.0) {
            return Err(Error::config("finetune.optimizer.weight_decay must be >= 0"));
        }
        if let Some(tau) = self.threshold.tau {
            if !tau.is_finite() || tau < 0.0 {
                return Err(Error::config("threshold.tau must be >= 0"));
            }
        }
        if !(self.threshold.factor.is_finite() && self.threshold.factor > 0.0) {
            return Err(Error::config("threshold.factor must be > 0"));
        }
        self.transfer.shape.validate().map_err(cfg_err)?;
        self.pretrain.optimizer.validate().map_err(cfg_err)?;
        self.finetune.adam.validate().map_err(cfg_err)?;
        self.shifting.validate().map_err(cfg_err)?;
        self.schedule().validate().map_err(cfg_err)?;
        Ok(())
    }

    /// Step-size schedule with `total_steps = 0` resolved to the fine-tuning budget.
    pub fn schedule(&self) -> ScheduleMultiplier {
        let mut s = self.finetune.schedule;
        if s.total_steps == 0 {
            s.total_steps = self.finetune.steps;
        }
        s
    }

    pub fn reference_steps(&self) -> u64 {
        self.threshold.reference_steps.unwrap_or(2 * self.finetune.steps)
    }

    fn entries(&self) -> BTreeMap<&'static str, String> {
        let s = &self.transfer.shape;
        let ft = &self.finetune;
        let pt = &self.pretrain;
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        BTreeMap::from([
            ("output_dir", self.output_dir.display().to_string()),
            ("seeds", seeds),
            ("transfer.kind", s.kind.to_string()),
            ("transfer.dim", s.dim.to_string()),
            ("transfer.hidden", s.hidden.to_string()),
            ("transfer.classes", s.classes.to_string()),
            ("transfer.n_samples", s.n_samples.to_string()),
            ("transfer.target_samples", self.transfer.target_samples.unwrap_or(0).to_string()),
            ("transfer.eval_samples", self.eval_samples.to_string()),
            ("transfer.rho", self.transfer.rho.to_string()),
            ("transfer.seed", self.transfer.seed.to_string()),
            ("pretrain.steps", pt.steps.to_string()),
            ("pretrain.batch_size", pt.batch_size.to_string()),
            ("pretrain.optimizer.alpha", pt.optimizer.alpha.to_string()),
            ("pretrain.optimizer.beta1", pt.optimizer.beta1.to_string()),
            ("pretrain.optimizer.beta2", pt.optimizer.beta2.to_string()),
            ("pretrain.optimizer.eps", pt.optimizer.eps.to_string()),
            ("finetune.steps", ft.steps.to_string()),
            ("finetune.batch_size", ft.batch_size.to_string()),
            ("finetune.optimizer.kind", ft.optimizer.to_string()),
            ("finetune.optimizer.alpha", ft.adam.alpha.to_string()),
            ("finetune.optimizer.beta1", ft.adam.beta1.to_string()),
            ("finetune.optimizer.beta2", ft.adam.beta2.to_string()),
            ("finetune.optimizer.eps", ft.adam.eps.to_string()),
            ("finetune.optimizer.weight_decay", ft.weight_decay.to_string()),
            ("finetune.init", ft.init.as_str().to_string()),
            ("finetune.schedule.kind", ft.schedule.kind.as_str().to_string()),
            ("finetune.schedule.warmup_steps", ft.schedule.warmup_steps.to_string()),
            ("finetune.schedule.total_steps", ft.schedule.total_steps.to_string()),
            ("penalty.kind", self.penalty.kind.as_str().to_string()),
            ("penalty.gamma", self.penalty.gamma.to_string()),
            ("penalty.fisher_samples", self.penalty.fisher_samples.to_string()),
            ("penalty.scale_by_alpha", self.penalty.scale_by_alpha.to_string()),
            ("shifting.k", self.shifting.k.to_string()),
            ("shifting.t0", self.shifting.t0.to_string()),
            ("threshold.tau", self.threshold.tau.unwrap_or(0.0).to_string()),
            ("threshold.factor", self.threshold.factor.to_string()),
            ("threshold.reference_steps", self.threshold.reference_steps.unwrap_or(0).to_string()),
        ])
    }

    /// Every key in sorted order; parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical config, excluding
    /// `seeds` and `output_dir`.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "seeds" && k != "output_dir" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
