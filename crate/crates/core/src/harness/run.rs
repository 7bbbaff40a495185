//! Pretraining and fine-tuning runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InitMode};
use super::trace::{CsvTraceWriter, NullSink, TraceRow, TraceSink, TrainingTrace};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::numkit::{l2_distance, ParamVector, RandomSource};
use crate::optim::{AdamState, Optimizer, OptimizerKind, ScheduleMultiplier, StepInput};
use crate::recall::{estimate_diag_fisher, PenaltyKind, PenaltyModel};
use crate::shifting::{composite_loss, AnnealSchedule};
use crate::tasks::{BatchSampler, Task, TransferPair};

/// Standard deviation of the random initialization, per coordinate.
pub const RANDOM_INIT_STD: f64 = 0.02;

pub const THETA_STAR_FILE: &str = "theta_star.bin";
pub const PRETRAIN_TRACE_FILE: &str = "pretrain_trace.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const RUN_FILE: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_target_loss: f64,
    pub best_target_loss: f64,
    /// First logged step whose target loss is below the threshold.
    pub steps_to_threshold: Option<u64>,
    pub final_dist_to_pretrained: f64,
    /// Loss of the final parameters on held-out target rows (the training
    /// rows when no held-out split is configured).
    pub final_eval_loss: f64,
    pub seed: u64,
    pub config_hash: String,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub theta_star: ParamVector,
    pub trace: TrainingTrace,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutput {
    pub trace: TrainingTrace,
    pub summary: RunSummary,
    pub theta: ParamVector,
}

/// `N(0, RANDOM_INIT_STD^2)` draw of `dim` coordinates.
pub fn random_init(dim: usize, rng: &mut RandomSource) -> ParamVector {
    ParamVector::from_vec_unchecked(rng.normal_vec(dim, RANDOM_INIT_STD))
}

fn at_step(err: Error, step: u64) -> Error {
    match err {
        Error::Numeric { what, .. } => Error::Numeric { step, what },
        other => other,
    }
}

struct Loop<'a> {
    task: &'a Task,
    optimizer: Optimizer,
    schedule: ScheduleMultiplier,
    shifting: Option<AnnealSchedule>,
    penalty: Option<&'a PenaltyModel>,
    /// Multiplier on the penalty gradient handed to the stepper.
    penalty_scale: f64,
    steps: u64,
    batch_size: usize,
}

impl Loop<'_> {
    fn run(
        &self,
        mut theta: ParamVector,
        batch_rng: RandomSource,
        trace: &mut TrainingTrace,
        sink: &mut dyn TraceSink,
    ) -> Result<ParamVector> {
        let mut sampler = BatchSampler::new(self.task.n_samples(), self.batch_size, batch_rng)?;
        let mut state = AdamState::new(theta.len());
        let recall = self.optimizer.kind.uses_recall();
        for t in 1..=self.steps {
            let batch = sampler.next_batch();
            let (batch_loss, grad) = self.task.loss_and_grad(&theta, &batch).map_err(|e| at_step(e, t))?;
            let target_loss = if batch.len() == self.task.n_samples() {
                batch_loss
            } else {
                self.task.full_loss(&theta)?
            };
            if !target_loss.is_finite() {
                return Err(Error::Numeric { step: t, what: "target loss".into() });
            }
            let lambda = match (recall, self.shifting) {
                (true, Some(s)) => s.lambda_at(state.t() + 1)?,
                _ => 1.0,
            };
            let eta = self.schedule.at(t)?;
            let (penalty_value, dist) = match self.penalty {
                Some(p) => {
                    let covered = theta.prefix(p.theta_star().len())?;
                    (p.loss(&theta)?, l2_distance(&covered, p.theta_star())?)
                }
                None => (0.0, 0.0),
            };
            let row = TraceRow {
                step: t,
                lambda,
                target_loss,
                penalty_value,
                composite_loss: composite_loss(lambda, target_loss, penalty_value)?,
                dist_to_pretrained: dist,
                grad_norm: grad.norm(),
                eta,
            };
            trace.record(&row)?;
            sink.record(&row)?;

            let pgrad = match (recall, self.penalty) {
                (true, Some(p)) => Some(p.grad(&theta)?.scale(self.penalty_scale)),
                (true, None) => Some(ParamVector::zeros(theta.len())),
                _ => None,
            };
            let input = StepInput { grad: &grad, lambda_t: lambda, penalty_grad: pgrad.as_ref() };
            let (next, next_state) =
                self.optimizer.step(&theta, &state, eta, input).map_err(|e| at_step(e, t))?;
            theta = next;
            state = next_state;
        }
        Ok(theta)
    }
}

/// Trains vanilla Adam on the source task from a seeded random init.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<Pretrained> {
    pretrain_with_sink(cfg, &cfg.transfer.generate()?, &mut NullSink)
}

pub fn pretrain_with_sink(cfg: &ExperimentConfig, pair: &TransferPair, sink: &mut dyn TraceSink) -> Result<Pretrained> {
    cfg.validate()?;
    let seed = RandomSource::new(cfg.transfer.seed);
    let source = &pair.source;
    let theta0 = random_init(source.dim(), &mut seed.child("pretrain-init"));
    let looper = Loop {
        task: source,
        optimizer: Optimizer::new(OptimizerKind::Adam, cfg.pretrain.optimizer)?,
        schedule: ScheduleMultiplier::constant(),
        shifting: None,
        penalty: None,
        penalty_scale: 1.0,
        steps: cfg.pretrain.steps,
        batch_size: cfg.pretrain.batch_size,
    };
    let mut trace = TrainingTrace::default();
    let theta_star = looper.run(theta0, seed.child("pretrain-batches"), &mut trace, sink)?;
    let final_loss = source.full_loss(&theta_star)?;
    if !final_loss.is_finite() {
        return Err(Error::Numeric { step: cfg.pretrain.steps, what: "source loss".into() });
    }
    Ok(Pretrained { theta_star, trace, final_loss })
}

/// Pretrains and writes `theta_star.bin` and `pretrain_trace.csv` into the output directory.
pub fn pretrain_to_dir(cfg: &ExperimentConfig) -> Result<Pretrained> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let pair = cfg.transfer.generate()?;
    if let (Some(s), Some(t)) = (pair.source.descriptor(), pair.target.descriptor()) {
        fs::write(dir.join("source_task.json"), s.to_json()?)?;
        fs::write(dir.join("target_task.json"), t.to_json()?)?;
    }
    let mut sink = CsvTraceWriter::create(&dir.join(PRETRAIN_TRACE_FILE))?;
    let out = pretrain_with_sink(cfg, &pair, &mut sink)?;
    checkpoint::write_params(&dir.join(THETA_STAR_FILE), &out.theta_star)?;
    Ok(out)
}

/// Penalty model for the configured kind. The Fisher diagonal is estimated on
/// the source task at `theta*`.
pub fn build_penalty(cfg: &ExperimentConfig, source: &Task, theta_star: &ParamVector) -> Result<PenaltyModel> {
    match cfg.penalty.kind {
        PenaltyKind::None => Ok(PenaltyModel::none(theta_star.clone())),
        PenaltyKind::Isotropic => PenaltyModel::isotropic(theta_star.clone(), cfg.penalty.gamma),
        PenaltyKind::DiagonalFisher => {
            let mut rng = RandomSource::new(cfg.transfer.seed).child("fisher");
            let (fisher, n_obs) = estimate_diag_fisher(source, theta_star, cfg.penalty.fisher_samples, &mut rng)?;
            PenaltyModel::diagonal_fisher(theta_star.clone(), fisher, n_obs)
        }
    }
}

/// `factor * best target loss` of a vanilla-Adam run from `theta*`, seeded by the transfer seed.
pub fn reference_threshold(cfg: &ExperimentConfig, target: &Task, theta_star: &ParamVector) -> Result<f64> {
    let mut reference = cfg.clone();
    reference.finetune.optimizer = OptimizerKind::Adam;
    reference.finetune.init = InitMode::Pretrained;
    reference.finetune.steps = cfg.reference_steps();
    reference.finetune.schedule = ScheduleMultiplier::constant();
    let pen = PenaltyModel::none(theta_star.clone());
    let out = finetune_task(&reference, target, None, &pen, cfg.transfer.seed, None, &mut NullSink)?;
    Ok(cfg.threshold.factor * out.summary.best_target_loss)
}

/// Generates the transfer pair, builds the penalty, resolves the threshold and fine-tunes.
pub fn finetune(cfg: &ExperimentConfig, theta_star: &ParamVector, seed: u64) -> Result<FinetuneOutput> {
    finetune_with_sink(cfg, theta_star, seed, &mut NullSink)
}

pub fn finetune_with_sink(
    cfg: &ExperimentConfig,
    theta_star: &ParamVector,
    seed: u64,
    sink: &mut dyn TraceSink,
) -> Result<FinetuneOutput> {
    let setup = prepare_finetune(cfg, theta_star)?;
    finetune_task(cfg, &setup.pair.target, setup.eval.as_ref(), &setup.penalty, seed, Some(setup.tau), sink)
}

/// Fine-tunes `target` under `cfg.finetune` with an explicit penalty and threshold.
///
/// If the target has more coordinates than `theta*`, the extra trailing block
/// is always randomly initialized and carries no penalty.
pub fn finetune_task(
    cfg: &ExperimentConfig,
    target: &Task,
    eval: Option<&Task>,
    penalty: &PenaltyModel,
    seed: u64,
    tau: Option<f64>,
    sink: &mut dyn TraceSink,
) -> Result<FinetuneOutput> {
    let theta_star = penalty.theta_star();
    let dim = target.dim();
    if theta_star.len() > dim {
        return Err(Error::config(format!("theta* has {} coordinates, target has {dim}", theta_star.len())));
    }
    let rng = RandomSource::new(seed);
    let random = random_init(dim, &mut rng.child("init"));
    let theta0 = match cfg.finetune.init {
        InitMode::Random => random,
        InitMode::Pretrained => {
            let mut v = theta_star.as_slice().to_vec();
            v.extend_from_slice(&random.as_slice()[theta_star.len()..]);
            ParamVector::from_vec_unchecked(v)
        }
    };
    let ft = &cfg.finetune;
    let optimizer = Optimizer::new(ft.optimizer, ft.adam)?.with_weight_decay(ft.weight_decay)?;
    let penalty_scale = if ft.optimizer == OptimizerKind::Recadam && cfg.penalty.scale_by_alpha {
        ft.adam.alpha
    } else {
        1.0
    };
    let looper = Loop {
        task: target,
        optimizer,
        schedule: cfg.schedule(),
        shifting: Some(cfg.shifting),
        penalty: Some(penalty),
        penalty_scale,
        steps: ft.steps,
        batch_size: ft.batch_size,
    };
    let mut trace = TrainingTrace::default();
    let theta = looper.run(theta0, rng.child("batches"), &mut trace, sink)?;

    let final_target_loss = target.full_loss(&theta)?;
    if !final_target_loss.is_finite() {
        return Err(Error::Numeric { step: ft.steps, what: "final target loss".into() });
    }
    let final_eval_loss = match eval {
        Some(e) => e.full_loss(&theta)?,
        None => final_target_loss,
    };
    let best_target_loss = trace.rows.iter().map(|r| r.target_loss).fold(final_target_loss, f64::min);
    let steps_to_threshold = tau.and_then(|tau| trace.rows.iter().find(|r| r.target_loss < tau).map(|r| r.step));
    let summary = RunSummary {
        final_target_loss,
        best_target_loss,
        steps_to_threshold,
        final_dist_to_pretrained: l2_distance(&theta.prefix(theta_star.len())?, theta_star)?,
        final_eval_loss,
        seed,
        config_hash: cfg.hash(),
        threshold: tau,
    };
    Ok(FinetuneOutput { trace, summary, theta })
}

/// Identity of one fine-tuning run inside an output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub optimizer: OptimizerKind,
    pub init: String,
    pub k: f64,
    pub t0: u64,
    pub gamma: f64,
    pub seed: u64,
    pub config_hash: String,
    pub status: String,
    pub error: Option<String>,
    pub summary: Option<RunSummary>,
}

impl RunRecord {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Self {
        RunRecord {
            run_id: run_id(cfg, seed),
            optimizer: cfg.finetune.optimizer,
            init: cfg.finetune.init.as_str().to_string(),
            k: cfg.shifting.k,
            t0: cfg.shifting.t0,
            gamma: cfg.penalty.gamma,
            seed,
            config_hash: cfg.hash(),
            status: "pending".into(),
            error: None,
            summary: None,
        }
    }

    /// Grouping label shared by every seed of one configuration.
    pub fn config_label(&self) -> String {
        format!("{}/{}/k={}/t0={}/gamma={}", self.optimizer, self.init, self.k, self.t0, self.gamma)
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    format!(
        "{}_{}_k{}_t0{}_g{}_s{}",
        cfg.finetune.optimizer,
        cfg.finetune.init.as_str(),
        cfg.shifting.k,
        cfg.shifting.t0,
        cfg.penalty.gamma,
        seed
    )
}

/// Runs one configuration into `<output_dir>/runs/<run_id>/`, writing the
/// trace incrementally and `run.json` at the end (including on failure).
/// The run error, if any, is returned alongside the record.
pub(crate) fn run_into_dir(
    cfg: &ExperimentConfig,
    setup: &FinetuneSetup,
    seed: u64,
) -> Result<(PathBuf, RunRecord, Option<Error>)> {
    let mut record = RunRecord::new(cfg, seed);
    let dir = cfg.output_dir.join("runs").join(&record.run_id);
    fs::create_dir_all(&dir)?;
    let mut sink = CsvTraceWriter::create(&dir.join(TRACE_FILE))?;
    let run = finetune_task(cfg, &setup.pair.target, setup.eval.as_ref(), &setup.penalty, seed, Some(setup.tau), &mut sink);
    let failure = match run {
        Ok(out) => {
            record.status = "ok".into();
            record.summary = Some(out.summary);
            None
        }
        Err(e) => {
            record.status = "failed".into();
            record.error = Some(e.to_string());
            Some(e)
        }
    };
    write_record(&dir, &record)?;
    Ok((dir, record, failure))
}

pub(crate) fn write_record(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(record)? + "\n")?;
    Ok(())
}

/// Target task, penalty and threshold shared by every fine-tuning run of one transfer pair.
#[derive(Clone, Debug)]
pub struct FinetuneSetup {
    pub pair: TransferPair,
    pub eval: Option<Task>,
    pub penalty: PenaltyModel,
    pub tau: f64,
}

pub fn prepare_finetune(cfg: &ExperimentConfig, theta_star: &ParamVector) -> Result<FinetuneSetup> {
    cfg.validate()?;
    let pair = cfg.transfer.generate()?;
    if theta_star.len() > pair.target.dim() {
        return Err(Error::config(format!(
            "theta* has {} coordinates but the target task has {}",
            theta_star.len(),
            pair.target.dim()
        )));
    }
    let penalty = build_penalty(cfg, &pair.source, theta_star)?;
    let tau = match cfg.threshold.tau {
        Some(t) => t,
        None => reference_threshold(cfg, &pair.target, theta_star)?,
    };
    let eval = match cfg.eval_samples {
        0 => None,
        n => Some(cfg.transfer.heldout_target(&pair, n)?),
    };
    Ok(FinetuneSetup { pair, eval, penalty, tau })
}

/// CLI `finetune`: one run per call, recorded under `<output_dir>/runs/`.
pub fn finetune_to_dir(cfg: &ExperimentConfig, theta_star: &ParamVector, seed: u64) -> Result<(PathBuf, RunRecord)> {
    let setup = prepare_finetune(cfg, theta_star)?;
    let (dir, record, failure) = run_into_dir(cfg, &setup, seed)?;
    match failure {
        Some(e) => Err(e),
        None => Ok((dir, record)),
    }
}
