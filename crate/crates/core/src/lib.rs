//! RecAdam: Adam with a pretraining-simulation penalty and objective shifting
//! applied outside the adaptive moments, alongside Adam/AdamW baselines and a
//! toy transfer-learning harness.
//!
//! Modules:
//! * [`numkit`]: parameter vectors, distances, seeded random streams;
//! * [`tasks`]: differentiable toy tasks and source/target pairs;
//! * [`optim`]: Adam, AdamW, coupled-penalty Adam and RecAdam steppers;
//! * [`recall`]: quadratic penalties, Fisher and Hessian estimators;
//! * [`shifting`]: the sigmoid mixture weight `lambda(t)`;
//! * [`harness`]: pretrain / fine-tune / sweep / report orchestration.

pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod numkit;
pub mod optim;
pub mod recall;
pub mod shifting;
pub mod tasks;

pub use error::{Error, Result};
pub use numkit::{axpy, l2_distance, ParamVector, RandomSource};
pub use optim::{
    adam_step, adamw_step, coupled_recadam_step, recadam_step, schedule_multiplier, AdamConfig, AdamState,
    Optimizer, OptimizerKind, ScheduleKind, ScheduleMultiplier, StepInput,
};
pub use recall::{
    analytic_hessian_quadratic, estimate_diag_fisher, fit_isotropic_gamma, penalty_grad, penalty_loss,
    HessianSummary, PenaltyKind, PenaltyModel,
};
pub use shifting::{composite_loss, lambda_at, AnnealSchedule};
pub use tasks::{finite_diff_grad, gen_transfer_pair, make_mlp_task, Batch, Task, TaskKind, TransferPair};
