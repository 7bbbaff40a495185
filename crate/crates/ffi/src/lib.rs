//! C ABI over the `recadam` library.
//!
//! Every function returns a [`RecadamStatus`]; results come back through out
//! pointers. On failure, [`recadam_last_error_message`] describes the most
//! recent error on the calling thread. Handles are opaque and owned by the
//! caller, who releases them with the matching `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use recadam::optim::{AdamConfig, AdamState, Optimizer, OptimizerKind, ScheduleKind, ScheduleMultiplier, StepInput};
use recadam::recall::PenaltyModel;
use recadam::shifting::AnnealSchedule;
use recadam::{Error, ParamVector};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecadamStatus {
    Ok = 0,
    InvalidArgument = 1,
    Dimension = 2,
    Numeric = 3,
    NullPointer = 4,
    Config = 5,
    NoData = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecadamOptimizerKind {
    Adam = 0,
    Adamw = 1,
    Recadam = 2,
    RecadamCoupled = 3,
}

impl From<RecadamOptimizerKind> for OptimizerKind {
    fn from(k: RecadamOptimizerKind) -> Self {
        match k {
            RecadamOptimizerKind::Adam => OptimizerKind::Adam,
            RecadamOptimizerKind::Adamw => OptimizerKind::Adamw,
            RecadamOptimizerKind::Recadam => OptimizerKind::Recadam,
            RecadamOptimizerKind::RecadamCoupled => OptimizerKind::RecadamCoupled,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecadamScheduleKind {
    Constant = 0,
    LinearWarmupConstant = 1,
    LinearWarmupLinearDecay = 2,
}

impl From<RecadamScheduleKind> for ScheduleKind {
    fn from(k: RecadamScheduleKind) -> Self {
        match k {
            RecadamScheduleKind::Constant => ScheduleKind::Constant,
            RecadamScheduleKind::LinearWarmupConstant => ScheduleKind::LinearWarmupConstant,
            RecadamScheduleKind::LinearWarmupLinearDecay => ScheduleKind::LinearWarmupLinearDecay,
        }
    }
}

/// Optimizer configuration plus its moment state.
pub struct RecadamOptimizer {
    optimizer: Optimizer,
    state: AdamState,
}

/// Quadratic recall penalty anchored at `theta*`.
pub struct RecadamPenalty {
    model: PenaltyModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> RecadamStatus {
    match err {
        Error::Dimension { .. } => RecadamStatus::Dimension,
        Error::Numeric { .. } => RecadamStatus::Numeric,
        Error::Config(_) => RecadamStatus::Config,
        Error::NoData(_) => RecadamStatus::NoData,
        Error::Io(_) => RecadamStatus::Io,
        _ => RecadamStatus::InvalidArgument,
    }
}

struct NullArg(&'static str);

enum Failure {
    Lib(Error),
    Null(NullArg),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<NullArg> for Failure {
    fn from(n: NullArg) -> Self {
        Failure::Null(n)
    }
}

/// Runs `f`, translating errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RecadamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            RecadamStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(NullArg(name)))) => {
            set_last_error(&format!("null pointer: {name}"));
            RecadamStatus::NullPointer
        }
        Err(_) => {
            set_last_error("internal panic");
            RecadamStatus::Panic
        }
    }
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], NullArg> {
    if p.is_null() {
        return Err(NullArg(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn read_vec(p: *const f64, len: usize, name: &'static str) -> Result<ParamVector, Failure> {
    Ok(ParamVector::new(read_slice(p, len, name)?.to_vec())?)
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &'static str) -> Result<(), NullArg> {
    if out.is_null() {
        return Err(NullArg(name));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn recadam_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates an optimizer for `dim` parameters. Pass `weight_decay = 0` for
/// every kind except `adamw`.
#[no_mangle]
pub unsafe extern "C" fn recadam_optimizer_new(
    kind: RecadamOptimizerKind,
    alpha: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    dim: usize,
    out: *mut *mut RecadamOptimizer,
) -> RecadamStatus {
    guard(|| {
        if out.is_null() {
            return Err(NullArg("out").into());
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be >= 1".into()).into());
        }
        let cfg = AdamConfig { alpha, beta1, beta2, eps };
        let optimizer = Optimizer::new(kind.into(), cfg)?.with_weight_decay(weight_decay)?;
        let handle = Box::new(RecadamOptimizer { optimizer, state: AdamState::new(dim) });
        write_out(out, Box::into_raw(handle), "out")?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn recadam_optimizer_free(opt: *mut RecadamOptimizer) {
    if !opt.is_null() {
        drop(Box::from_raw(opt));
    }
}

/// Steps taken so far.
#[no_mangle]
pub unsafe extern "C" fn recadam_optimizer_step_count(opt: *const RecadamOptimizer, out: *mut u64) -> RecadamStatus {
    guard(|| {
        let opt = opt.as_ref().ok_or(NullArg("opt"))?;
        write_out(out, opt.state.t(), "out")?;
        Ok(())
    })
}

/// Applies one step to `theta` in place. `penalty_grad` may be null for the
/// plain kinds; `lambda` is ignored by them. On failure `theta` and the
/// optimizer state are left unchanged.
#[no_mangle]
pub unsafe extern "C" fn recadam_optimizer_step(
    opt: *mut RecadamOptimizer,
    theta: *mut f64,
    grad: *const f64,
    penalty_grad: *const f64,
    len: usize,
    eta: f64,
    lambda: f64,
) -> RecadamStatus {
    guard(|| {
        let opt = opt.as_mut().ok_or(NullArg("opt"))?;
        if theta.is_null() {
            return Err(NullArg("theta").into());
        }
        let current = read_vec(theta, len, "theta")?;
        let g = read_vec(grad, len, "grad")?;
        let p = if penalty_grad.is_null() { None } else { Some(read_vec(penalty_grad, len, "penalty_grad")?) };
        let input = StepInput { grad: &g, lambda_t: lambda, penalty_grad: p.as_ref() };
        let (next, state) = opt.optimizer.step(&current, &opt.state, eta, input)?;
        slice::from_raw_parts_mut(theta, len).copy_from_slice(next.as_slice());
        opt.state = state;
        Ok(())
    })
}

/// Isotropic penalty `gamma/2 * |theta - theta*|^2`.
#[no_mangle]
pub unsafe extern "C" fn recadam_penalty_new_isotropic(
    theta_star: *const f64,
    len: usize,
    gamma: f64,
    out: *mut *mut RecadamPenalty,
) -> RecadamStatus {
    guard(|| {
        if out.is_null() {
            return Err(NullArg("out").into());
        }
        let model = PenaltyModel::isotropic(read_vec(theta_star, len, "theta_star")?, gamma)?;
        write_out(out, Box::into_raw(Box::new(RecadamPenalty { model })), "out")?;
        Ok(())
    })
}

/// Diagonal-Fisher penalty `n_obs/2 * sum F_i (theta_i - theta*_i)^2`.
#[no_mangle]
pub unsafe extern "C" fn recadam_penalty_new_diagonal_fisher(
    theta_star: *const f64,
    fisher_diag: *const f64,
    len: usize,
    n_obs: u64,
    out: *mut *mut RecadamPenalty,
) -> RecadamStatus {
    guard(|| {
        if out.is_null() {
            return Err(NullArg("out").into());
        }
        let star = read_vec(theta_star, len, "theta_star")?;
        let fisher = read_vec(fisher_diag, len, "fisher_diag")?;
        let model = PenaltyModel::diagonal_fisher(star, fisher, n_obs)?;
        write_out(out, Box::into_raw(Box::new(RecadamPenalty { model })), "out")?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn recadam_penalty_free(pen: *mut RecadamPenalty) {
    if !pen.is_null() {
        drop(Box::from_raw(pen));
    }
}

#[no_mangle]
pub unsafe extern "C" fn recadam_penalty_loss(
    pen: *const RecadamPenalty,
    theta: *const f64,
    len: usize,
    out: *mut f64,
) -> RecadamStatus {
    guard(|| {
        let pen = pen.as_ref().ok_or(NullArg("pen"))?;
        let value = pen.model.loss(&read_vec(theta, len, "theta")?)?;
        write_out(out, value, "out")?;
        Ok(())
    })
}

/// Writes `len` gradient values to `out`.
#[no_mangle]
pub unsafe extern "C" fn recadam_penalty_grad(
    pen: *const RecadamPenalty,
    theta: *const f64,
    len: usize,
    out: *mut f64,
) -> RecadamStatus {
    guard(|| {
        let pen = pen.as_ref().ok_or(NullArg("pen"))?;
        if out.is_null() {
            return Err(NullArg("out").into());
        }
        let g = pen.model.grad(&read_vec(theta, len, "theta")?)?;
        slice::from_raw_parts_mut(out, len).copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Sigmoid mixture weight `1 / (1 + exp(-k (t - t0)))` for step `t >= 1`.
#[no_mangle]
pub unsafe extern "C" fn recadam_lambda_at(k: f64, t0: u64, t: u64, out: *mut f64) -> RecadamStatus {
    guard(|| {
        let value = AnnealSchedule::new(k, t0)?.lambda_at(t)?;
        write_out(out, value, "out")?;
        Ok(())
    })
}

/// Step-size multiplier at step `t >= 1`.
#[no_mangle]
pub unsafe extern "C" fn recadam_schedule_multiplier(
    kind: RecadamScheduleKind,
    warmup_steps: u64,
    total_steps: u64,
    t: u64,
    out: *mut f64,
) -> RecadamStatus {
    guard(|| {
        let sched = ScheduleMultiplier { kind: kind.into(), warmup_steps, total_steps };
        write_out(out, sched.at(t)?, "out")?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn recadam_l2_distance(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> RecadamStatus {
    guard(|| {
        let d = recadam::l2_distance(&read_vec(a, len, "a")?, &read_vec(b, len, "b")?)?;
        write_out(out, d, "out")?;
        Ok(())
    })
}
