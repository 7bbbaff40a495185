mod common;

use common::pv;
use recadam::numkit::{max_relative_error, ParamVector, RandomSource};
use recadam::tasks::{
    draw_generative_params, finite_diff_grad, gen_transfer_pair, make_mlp_task, Batch, BatchSampler, Features,
    GenerativeParams, Task, TaskShape,
};
use recadam::Error;

fn identity(d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    (0..d).for_each(|i| a[i * d + i] = 1.0);
    a
}

fn shapes() -> Vec<TaskShape> {
    vec![
        TaskShape::quadratic(6),
        TaskShape::linear_regression(5, 40),
        TaskShape::logistic_regression(5, 40),
        TaskShape::mlp(3, 4, 3, 40),
    ]
}

#[test]
fn quadratic_bowl_examples() {
    let bowl = Task::quadratic(identity(2), ParamVector::zeros(2)).unwrap();
    let b = bowl.full_batch();
    assert_eq!(bowl.loss_and_grad(&ParamVector::zeros(2), &b).unwrap(), (0.0, ParamVector::zeros(2)));
    let (loss, g) = bowl.loss_and_grad(&pv(&[3.0, 4.0]), &b).unwrap();
    assert_eq!(loss, 12.5);
    assert_eq!(g, pv(&[3.0, 4.0]));
    let fd = finite_diff_grad(&bowl, &pv(&[1.0, 0.0]), &b, 1e-5).unwrap();
    assert!((fd[0] - 1.0).abs() < 1e-9 && fd[1].abs() < 1e-9);
    assert!(matches!(finite_diff_grad(&bowl, &pv(&[1.0, 0.0]), &b, 0.0), Err(Error::InvalidArgument(_))));
}

#[test]
fn generated_quadratic_is_exact_at_its_center() {
    for seed in 0..10 {
        let pair = gen_transfer_pair(&TaskShape::quadratic(12), 0.4, &RandomSource::new(seed)).unwrap();
        for task in [&pair.source, &pair.target] {
            let c = task.center().unwrap().clone();
            let (loss, g) = task.loss_and_grad(&c, &task.full_batch()).unwrap();
            assert_eq!(loss, 0.0);
            assert_eq!(g, ParamVector::zeros(12));
        }
    }
}

#[test]
fn flat_task_has_zero_finite_difference_gradient() {
    let x = Features::new(3, vec![0.0; 12]).unwrap();
    let flat = Task::linear_regression(x, vec![0.7; 4]).unwrap();
    let fd = finite_diff_grad(&flat, &pv(&[1.0, -2.0, 0.5]), &flat.full_batch(), 1e-5).unwrap();
    assert_eq!(fd, ParamVector::zeros(3));
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for shape in shapes() {
        let pair = gen_transfer_pair(&shape, 0.5, &RandomSource::new(3)).unwrap();
        let task = &pair.target;
        let mut rng = RandomSource::new(77);
        for trial in 0..20 {
            let theta = ParamVector::new(rng.normal_vec(task.dim(), 0.7)).unwrap();
            let n = task.n_samples();
            let batch = if n == 0 {
                task.full_batch()
            } else {
                let mut idx = rng.permutation(n);
                idx.truncate(1 + rng.index(n));
                Batch::new(idx)
            };
            let (_, g) = task.loss_and_grad(&theta, &batch).unwrap();
            let fd = finite_diff_grad(task, &theta, &batch, 1e-5).unwrap();
            let err = max_relative_error(g.as_slice(), fd.as_slice(), 1e-8);
            assert!(err < 1e-5, "{:?} trial {trial}: {err}", shape.kind);
        }
    }
}

#[test]
fn full_gradient_is_weighted_mean_of_disjoint_batches() {
    for shape in shapes().into_iter().skip(1) {
        let pair = gen_transfer_pair(&shape, 0.5, &RandomSource::new(8)).unwrap();
        let task = &pair.source;
        let theta = ParamVector::new(RandomSource::new(2).normal_vec(task.dim(), 0.5)).unwrap();
        let (_, full) = task.loss_and_grad(&theta, &task.full_batch()).unwrap();
        let perm = RandomSource::new(5).permutation(task.n_samples());
        let mut acc = vec![0.0; task.dim()];
        for chunk in perm.chunks(7) {
            let (_, g) = task.loss_and_grad(&theta, &Batch::new(chunk.to_vec())).unwrap();
            let w = chunk.len() as f64 / task.n_samples() as f64;
            acc.iter_mut().zip(g.iter()).for_each(|(a, g)| *a += w * g);
        }
        for (a, f) in acc.iter().zip(full.iter()) {
            assert!((a - f).abs() <= 1e-10, "{:?}: {a} vs {f}", shape.kind);
        }
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let pair = gen_transfer_pair(&TaskShape::logistic_regression(4, 10), 0.5, &RandomSource::new(1)).unwrap();
    let t = &pair.source;
    assert!(matches!(t.loss_and_grad(&ParamVector::zeros(3), &t.full_batch()), Err(Error::Dimension { .. })));
    assert!(matches!(t.loss_and_grad(&ParamVector::zeros(4), &Batch::new(vec![])), Err(Error::InvalidBatch(_))));
    assert!(matches!(t.loss(&ParamVector::zeros(4), &Batch::new(vec![10])), Err(Error::InvalidBatch(_))));
    for rho in [-0.1, 1.5, f64::NAN] {
        assert!(gen_transfer_pair(&TaskShape::quadratic(3), rho, &RandomSource::new(1)).is_err());
    }
    assert!(make_mlp_task(0, 3, 2, 10, &RandomSource::new(1)).is_err());
}

#[test]
fn mlp_parameter_count_and_uniform_softmax() {
    let task = make_mlp_task(2, 3, 2, 10, &RandomSource::new(4)).unwrap();
    assert_eq!(task.dim(), 17);
    // zero weights give uniform class probabilities whatever the labels
    let x = Features::new(2, vec![0.3, -1.0, 2.0, 0.5, -0.7, 0.1, 1.1, 1.2]).unwrap();
    let balanced = Task::mlp(recadam::tasks::MlpShape { dim_in: 2, hidden: 3, classes: 2 }, x, vec![0, 1, 1, 0]).unwrap();
    let loss = balanced.full_loss(&ParamVector::zeros(17)).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn transfer_pairs_are_deterministic() {
    for shape in shapes() {
        let a = gen_transfer_pair(&shape, 0.0, &RandomSource::new(11)).unwrap();
        let b = gen_transfer_pair(&shape, 0.0, &RandomSource::new(11)).unwrap();
        assert_eq!(a.source.generative_params(), b.source.generative_params());
        assert_eq!(a.target.generative_params(), b.target.generative_params());
        let theta = ParamVector::new(RandomSource::new(6).normal_vec(a.source.dim(), 1.0)).unwrap();
        for (x, y) in [(&a.source, &b.source), (&a.target, &b.target)] {
            let lx = x.loss_and_grad(&theta, &x.full_batch()).unwrap();
            let ly = y.loss_and_grad(&theta, &y.full_batch()).unwrap();
            assert_eq!(lx.0.to_bits(), ly.0.to_bits());
            assert_eq!(lx.1, ly.1);
        }
    }
}

#[test]
fn identical_tasks_at_full_relatedness() {
    let pair = gen_transfer_pair(&TaskShape::quadratic(9), 1.0, &RandomSource::new(2)).unwrap();
    assert_eq!(pair.source.center(), pair.target.center());
    let theta = ParamVector::new(RandomSource::new(3).normal_vec(9, 1.0)).unwrap();
    assert_eq!(pair.source.full_loss(&theta).unwrap(), pair.target.full_loss(&theta).unwrap());
}

#[test]
fn half_relatedness_recomputed_from_split_streams() {
    let shape = TaskShape::quadratic(20);
    let rng = RandomSource::new(7);
    let pair = gen_transfer_pair(&shape, 0.5, &rng).unwrap();
    let src = draw_generative_params(&shape, &mut rng.child("source"));
    let ind = draw_generative_params(&shape, &mut rng.child("independent"));
    let (GenerativeParams::Quadratic { center: cs, .. }, GenerativeParams::Quadratic { center: ci, .. }) = (src, ind)
    else {
        panic!("quadratic shape produced non-quadratic parameters");
    };
    let target = pair.target.center().unwrap();
    assert_eq!(pair.source.center().unwrap().as_slice(), cs.as_slice());
    for i in 0..20 {
        assert_eq!(target[i], 0.5 * cs[i] + 0.5 * ci[i]);
    }
    // the independent draw is its own stream, not a function of the source's
    assert_ne!(cs, ci);
}

#[test]
fn sampler_covers_each_epoch_without_replacement() {
    let mut s = BatchSampler::new(23, 5, RandomSource::new(9)).unwrap();
    // 4 full batches per epoch, the partial fifth is dropped
    for _ in 0..3 {
        let mut seen: Vec<usize> = (0..4).flat_map(|_| s.next_batch().indices().to_vec()).collect();
        assert!(seen.iter().all(|&i| i < 23));
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 20);
    }
    let mut whole = BatchSampler::new(23, 23, RandomSource::new(9)).unwrap();
    let mut all = whole.next_batch().indices().to_vec();
    all.sort_unstable();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    assert!(BatchSampler::new(23, 0, RandomSource::new(9)).is_err());
}
