mod common;

use common::{optimizer, pv, scalar_adam_oracle};
use recadam::numkit::{ParamVector, RandomSource};
use recadam::optim::{
    adam_step, adamw_step, coupled_recadam_step, recadam_step, schedule_multiplier, AdamConfig, AdamState,
    OptimizerKind, ScheduleKind, ScheduleMultiplier, StepInput,
};
use recadam::tasks::{gen_transfer_pair, TaskShape};
use recadam::Error;

#[test]
fn second_step_matches_scalar_oracle() {
    let cfg = AdamConfig::with_alpha(0.1);
    let oracle = scalar_adam_oracle(1.0, &cfg, 2, |th| th);
    let s0 = AdamState::new(1);
    let (t1, s1) = adam_step(&pv(&[1.0]), &s0, &cfg, 1.0, &pv(&[1.0])).unwrap();
    let g1 = t1.clone();
    let (t2, s2) = adam_step(&t1, &s1, &cfg, 1.0, &g1).unwrap();
    assert!((t2[0] - oracle[1]).abs() <= 1e-12);
    assert_eq!(s2.t(), 2);
}

fn scalar_adamw_oracle(theta0: f64, cfg: &AdamConfig, wd: f64, steps: usize) -> Vec<f64> {
    let (mut th, mut m, mut v) = (theta0, 0.0f64, 0.0f64);
    let mut out = Vec::new();
    for t in 1..=steps as i32 {
        let g = th;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        th -= cfg.alpha * mh / (vh.sqrt() + cfg.eps) + wd * th;
        out.push(th);
    }
    out
}

#[test]
fn adamw_trace_matches_scalar_oracle() {
    let cfg = AdamConfig::with_alpha(0.05);
    let oracle = scalar_adamw_oracle(2.0, &cfg, 0.01, 100);
    let (mut th, mut s) = (pv(&[2.0]), AdamState::new(1));
    for (t, want) in oracle.iter().enumerate() {
        let g = th.clone();
        (th, s) = adamw_step(&th, &s, &cfg, 1.0, &g, 0.01).unwrap();
        assert!((th[0] - want).abs() <= 1e-12, "step {}: {} vs {want}", t + 1, th[0]);
    }
}

#[test]
fn zero_gradient_from_fresh_state_does_not_move() {
    let cfg = AdamConfig::default();
    let th = pv(&[0.3, -2.0]);
    let (next, s) = adam_step(&th, &AdamState::new(2), &cfg, 1.0, &ParamVector::zeros(2)).unwrap();
    assert_eq!(next, th);
    assert_eq!(s.m(), &ParamVector::zeros(2));
    assert_eq!(s.v(), &ParamVector::zeros(2));
}

#[test]
fn pure_decay_and_pure_recall_steps() {
    let cfg = AdamConfig::default();
    let (th, _) = adamw_step(&pv(&[1.0, 1.0]), &AdamState::new(2), &cfg, 1.0, &ParamVector::zeros(2), 0.01).unwrap();
    assert_eq!(th, pv(&[0.99, 0.99]));

    let p = pv(&[0.4, -3.0]);
    let theta = pv(&[1.0, 2.0]);
    let (th, s) = recadam_step(&theta, &AdamState::new(2), &cfg, 1.0, &ParamVector::zeros(2), 0.5, Some(&p)).unwrap();
    assert_eq!(th, pv(&[1.0 - 0.5 * 0.4, 2.0 + 0.5 * 3.0]));
    assert_eq!(s.m(), &ParamVector::zeros(2));
}

#[test]
fn coupled_at_pretrained_point_without_signal_is_stationary() {
    let cfg = AdamConfig::with_alpha(0.1);
    let theta = pv(&[0.5, -0.5, 1.0]);
    let zero = ParamVector::zeros(3);
    let (th, _) = coupled_recadam_step(&theta, &AdamState::new(3), &cfg, 1.0, &zero, 0.2, Some(&zero)).unwrap();
    assert_eq!(th, theta);
}

#[test]
fn decoupling_invariant_on_a_random_quadratic() {
    let pair = gen_transfer_pair(&TaskShape::quadratic(8), 0.3, &RandomSource::new(4)).unwrap();
    let task = &pair.target;
    let star = pair.source.center().unwrap().clone();
    let cfg = AdamConfig::with_alpha(0.02);
    let (gamma, eta) = (3.0, 0.7);
    let (mut th, mut s) = (ParamVector::zeros(8), AdamState::new(8));
    for t in 1..=200u64 {
        let lambda = 1.0 / (1.0 + (-0.05 * (t as f64 - 100.0)).exp());
        let (_, g) = task.loss_and_grad(&th, &task.full_batch()).unwrap();
        let p = th.sub(&star).unwrap().scale(gamma);
        let (next, ns) = recadam_step(&th, &s, &cfg, eta, &g, lambda, Some(&p)).unwrap();
        // adaptive term recomputed from the new moments
        for i in 0..8 {
            let mh = ns.m()[i] / (1.0 - cfg.beta1.powi(t as i32));
            let vh = ns.v()[i] / (1.0 - cfg.beta2.powi(t as i32));
            let adaptive = eta * lambda * cfg.alpha * mh / (vh.sqrt() + cfg.eps);
            let lhs = (th[i] - next[i]) - adaptive;
            let rhs = eta * (1.0 - lambda) * p[i];
            let scale = th[i].abs().max(adaptive.abs()).max(rhs.abs());
            assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * scale, "step {t} coord {i}: {lhs} vs {rhs}");
        }
        (th, s) = (next, ns);
    }
}

#[test]
fn coupled_penalty_on_high_gradient_coordinate_is_smaller() {
    let grad = pv(&[100.0, 1.0]);
    let opt = optimizer(OptimizerKind::RecadamCoupled, 0.01);
    let (mut th, mut s) = (ParamVector::zeros(2), AdamState::new(2));
    for t in 1..=80 {
        let p = th.clone();
        if t > 50 {
            let d = common::penalty_displacement(&opt, &th, &s, 1.0, &grad, 0.5, &p);
            assert!((d[0] / p[0]).abs() < (d[1] / p[1]).abs(), "step {t}");
        }
        (th, s) = opt.step(&th, &s, 1.0, StepInput::recall(&grad, 0.5, &p)).unwrap();
    }
}

#[test]
fn bias_correction_after_one_step() {
    let cfg = AdamConfig::default();
    let mut rng = RandomSource::new(9);
    let g = ParamVector::new(rng.normal_vec(64, 3.0)).unwrap();
    let (_, s) = adam_step(&ParamVector::zeros(64), &AdamState::new(64), &cfg, 1.0, &g).unwrap();
    for i in 0..64 {
        let m_hat = s.m()[i] / (1.0 - cfg.beta1);
        let v_hat = s.v()[i] / (1.0 - cfg.beta2);
        // (1 - beta) g rounds once, so the correction is exact to half an ulp
        assert!((m_hat - g[i]).abs() <= 0.5 * f64::EPSILON * g[i].abs() * 2.0);
        assert!((v_hat - g[i] * g[i]).abs() <= 2.0 * f64::EPSILON * g[i] * g[i]);
        assert!(s.v()[i] >= 0.0);
    }
}

#[test]
fn adam_converges_on_a_strongly_convex_quadratic() {
    let pair = gen_transfer_pair(&TaskShape::quadratic(10), 1.0, &RandomSource::new(21)).unwrap();
    let task = &pair.source;
    let opt = optimizer(OptimizerKind::Adam, 0.1);
    let (mut th, mut s) = (ParamVector::zeros(10), AdamState::new(10));
    let mut reached = None;
    for t in 1..=5000 {
        let (loss, g) = task.loss_and_grad(&th, &task.full_batch()).unwrap();
        if loss < 1e-10 {
            reached = Some(t);
            break;
        }
        (th, s) = opt.step(&th, &s, 1.0, StepInput::plain(&g)).unwrap();
    }
    assert!(reached.is_some(), "loss still {}", task.full_loss(&th).unwrap());
}

#[test]
fn non_finite_gradient_reports_the_step() {
    let cfg = AdamConfig::default();
    let mut s = AdamState::new(1);
    let mut th = pv(&[1.0]);
    for _ in 0..3 {
        (th, s) = adam_step(&th, &s, &cfg, 1.0, &pv(&[0.5])).unwrap();
    }
    let huge = pv(&[1e200]);
    match adam_step(&th, &s, &cfg, 1.0, &huge) {
        Err(Error::Numeric { step, .. }) => assert_eq!(step, 4),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn schedule_multiplier_examples() {
    let c = ScheduleMultiplier::constant();
    assert_eq!(schedule_multiplier(&c, 1).unwrap(), 1.0);
    assert_eq!(schedule_multiplier(&c, 123_456).unwrap(), 1.0);
    let warm = ScheduleMultiplier { kind: ScheduleKind::LinearWarmupConstant, warmup_steps: 100, total_steps: 1000 };
    assert_eq!(schedule_multiplier(&warm, 50).unwrap(), 0.5);
    assert_eq!(schedule_multiplier(&warm, 5000).unwrap(), 1.0);
    let decay = ScheduleMultiplier { kind: ScheduleKind::LinearWarmupLinearDecay, warmup_steps: 100, total_steps: 1000 };
    assert_eq!(schedule_multiplier(&decay, 550).unwrap(), 0.5);
    assert_eq!(schedule_multiplier(&decay, 1000).unwrap(), 0.0);
    for t in 1..=1200 {
        let e = schedule_multiplier(&decay, t).unwrap();
        assert!((0.0..=1.0).contains(&e));
    }
    assert!(matches!(schedule_multiplier(&c, 0), Err(Error::InvalidArgument(_))));
}
