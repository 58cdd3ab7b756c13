//! Continual-learning methods against closed-form and reference oracles.

mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use common::*;
use seqmap::ad::{hessian, value, value_and_grad, HessianMatrix, Matrix, ParamVector};
use seqmap::methods::{
    empirical_fisher_diagonal, fit_consolidator, run_finetune, run_joint, run_sequence, sample_uniform_ball,
    task_hessian, task_nll, ConsolidatorConfig, Learner, Method, MethodState, Problem, SiState,
};
use seqmap::nn::{init_params, predict_class, Head, ModelSpec};
use seqmap::objectives::{
    exact_joint_loss, huber, Curvature, LikelihoodKind, Nll, Penalty, PenaltyState, RecursiveLoss,
};
use seqmap::optim::{train_with_hook, TrainConfig};
use seqmap::tasks::{load_builtin, split_by_class, split_train_val_test, TaskSequence};

fn iris_sr() -> (Problem, TaskSequence, Vec<Nll>) {
    let ds = load_builtin("iris").unwrap();
    let seq = split_by_class(&split_train_val_test(&ds, 0).unwrap(), 1).unwrap();
    let spec = ModelSpec::softmax_regression(4, 3).unwrap();
    let problem = Problem::new(spec, LikelihoodKind::Categorical, TrainConfig::new(100, 16, 0.1, 0));
    let nlls = seq
        .train()
        .iter()
        .map(|d| task_nll(&problem, d.x(), d.y()).unwrap())
        .collect();
    (problem, seq, nlls)
}

fn accuracy(spec: &ModelSpec, theta: &ParamVector, x: &Matrix, y: &[usize]) -> f64 {
    let pred = predict_class(spec, theta, x).unwrap();
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

fn to_dmatrix(h: &HessianMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(h.dim(), h.dim(), h.as_slice())
}

/// One Newton step; exact for quadratic objectives.
fn newton_minimizer(f: &RecursiveLoss, start: &ParamVector) -> ParamVector {
    let (_, g) = value_and_grad(f, start).unwrap();
    let h = to_dmatrix(&hessian(f, start).unwrap());
    let step = h.lu().solve(&DVector::from_column_slice(g.as_slice())).unwrap();
    ParamVector::new(start.as_slice().iter().zip(step.iter()).map(|(t, s)| t - s).collect()).unwrap()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn aqc_is_exact_for_least_squares() {
    let d_in = 3;
    let spec = ModelSpec::new(d_in, vec![], 1, Head::Scalar).unwrap();
    let d = spec.param_count();
    let mut r = rng(1);
    let make = |r: &mut _| {
        let x = normal_matrix(r, 12, d_in, 1.0);
        let y = normal_vector(r, 12, 2.0).into_vec();
        Nll::least_squares(spec.clone(), Arc::new(x), Arc::new(y)).unwrap()
    };
    let (t1, t2) = (make(&mut r), make(&mut r));
    let zero = ParamVector::zeros(d);

    // joint MAP by the normal equations: (I + Σ AᵀA) θ = Σ Aᵀy over [x, 1]
    let mut lhs = DMatrix::<f64>::identity(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for nll in [&t1, &t2] {
        let x = nll.inputs();
        let a = DMatrix::from_fn(x.rows(), d, |i, j| if j < d_in { x.get(i, j) } else { 1.0 });
        let (_, g0) = value_and_grad(nll, &zero).unwrap();
        lhs += a.transpose() * &a;
        rhs -= DVector::from_column_slice(g0.as_slice());
    }
    let joint = lhs.lu().solve(&rhs).unwrap();

    let mut state = PenaltyState::initial_full(d);
    let l1 = RecursiveLoss::new(Arc::new(state.penalty(1.0).unwrap()), t1.clone()).unwrap();
    let theta1 = newton_minimizer(&l1, &zero);
    let Curvature::Full(acc) = &mut state.curvature else { unreachable!() };
    acc.add_assign(&task_hessian(&t1, &theta1, 5).unwrap()).unwrap();
    state.anchor = theta1;
    let l2 = RecursiveLoss::new(Arc::new(state.penalty(1.0).unwrap()), t2.clone()).unwrap();
    let theta2 = newton_minimizer(&l2, &zero);
    let err = theta2.as_slice().iter().zip(joint.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-6, "AQC vs joint: {err:e}");

    // the trained learner lands on the same point up to optimizer tolerance
    let problem = Problem::new(spec.clone(), LikelihoodKind::Categorical, TrainConfig::new(3000, 12, 0.05, 0));
    let mut learner = Learner::new(&problem, Method::Aqc { lambda: 1.0 }, 0).unwrap();
    learner.step(&problem, &[t1.clone()]).unwrap();
    learner.step(&problem, &[t1, t2]).unwrap();
    let err = learner.theta.as_slice().iter().zip(joint.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-3, "trained AQC vs joint: {err:e}");
}

#[test]
fn huge_lambda_pins_aqc_to_its_anchor() {
    let (problem, _, nlls) = iris_sr();
    let mut learner = Learner::new(&problem, Method::Aqc { lambda: 1e8 }, 0).unwrap();
    learner.step(&problem, &nlls[..1]).unwrap();
    let anchor = learner.theta.clone();
    learner.step(&problem, &nlls[..2]).unwrap();
    let moved = learner.theta.distance(&anchor);
    assert!(moved < 1e-2, "moved {moved}");
}

#[test]
fn aqc_accumulates_exact_hessians_and_ignores_batch_size() {
    let (mut problem, _, nlls) = iris_sr();
    let mut thetas = Vec::new();
    let learner = run_sequence(&problem, Method::Aqc { lambda: 10.0 }, &nlls, 0, |_, l| {
        thetas.push(l.theta.clone());
        Ok(())
    })
    .unwrap();
    let MethodState::Aqc(state) = &learner.state else { panic!("wrong state") };
    let Curvature::Full(acc) = &state.curvature else { panic!("wrong curvature") };
    let mut expect = HessianMatrix::identity(problem.dim());
    for (nll, theta) in nlls.iter().zip(&thetas) {
        expect.add_assign(&hessian(nll, theta).unwrap()).unwrap();
    }
    assert!(acc.max_abs_diff(&expect) <= 1e-8 * expect.max_abs().max(1.0));
    assert_eq!(state.anchor, thetas[2]);

    problem.hessian_batch_size = Some(usize::MAX);
    let full_batch = run_sequence(&problem, Method::Aqc { lambda: 10.0 }, &nlls, 0, |_, _| Ok(())).unwrap();
    let MethodState::Aqc(other) = &full_batch.state else { panic!("wrong state") };
    let Curvature::Full(acc_full) = &other.curvature else { panic!("wrong curvature") };
    assert!(acc.max_abs_diff(acc_full) <= 1e-8);
}

#[test]
fn si_path_integral_tracks_per_coordinate_loss_decrease() {
    // ½λ Σ w_k(θ_k − a_k)² plus an all-zero regression data set, which adds
    // ½n·b² on the bias alone: the objective is separable per coordinate
    let spec = ModelSpec::new(3, vec![], 1, Head::Scalar).unwrap();
    let d = spec.param_count();
    let n = 4;
    let nll = Nll::least_squares(spec.clone(), Arc::new(Matrix::zeros(n, 3)), Arc::new(vec![0.0; n])).unwrap();
    let w = [1.0, 3.0, 0.5, 2.0];
    let a = [2.0, -1.0, 1.5, 1.0];
    let state = PenaltyState {
        anchor: ParamVector::new(a.to_vec()).unwrap(),
        curvature: Curvature::Diagonal(w.to_vec()),
        tasks_consolidated: 1,
    };
    let loss = RecursiveLoss::new(Arc::new(state.penalty(1.0).unwrap()), nll).unwrap();
    let per_coord = |k: usize, t: f64| {
        let bias = if k == d - 1 { 0.5 * n as f64 * t * t } else { 0.0 };
        0.5 * w[k] * (t - a[k]).powi(2) + bias
    };
    let start = ParamVector::zeros(d);
    let mut si = SiState::new(start.clone());
    let cfg = TrainConfig::new(400, n, 0.01, 3);
    let end = train_with_hook(&loss, &cfg, &start, |e| si.observe(e.grad, e.theta_before, e.theta_after)).unwrap();
    for k in 0..d {
        let decrease = per_coord(k, start.as_slice()[k]) - per_coord(k, end.as_slice()[k]);
        assert!(decrease > 0.1, "coordinate {k} barely moved");
        let rel = (si.path[k] - decrease).abs() / decrease;
        assert!(rel <= 0.1, "coordinate {k}: ω {} vs decrease {decrease} ({rel})", si.path[k]);
    }
}

#[test]
fn fisher_and_hessian_diagonals_agree_in_rank() {
    let ds = load_builtin("iris").unwrap();
    let spec = ModelSpec::softmax_regression(4, 3).unwrap();
    let problem = Problem::new(spec.clone(), LikelihoodKind::Categorical, TrainConfig::new(200, 16, 0.1, 0));
    let nll = task_nll(&problem, ds.x(), ds.y()).unwrap();
    let mut learner = Learner::new(&problem, Method::Finetune, 0).unwrap();
    learner.step(&problem, &[nll.clone()]).unwrap();
    let fisher = empirical_fisher_diagonal(&nll, &learner.theta).unwrap();
    let h = hessian(&nll, &learner.theta).unwrap().diagonal();
    let rho = spearman(&fisher, &h);
    assert!(rho > 0.5, "Spearman {rho}");
}

#[test]
fn finetuning_forgets_the_first_task() {
    let (problem, seq, nlls) = iris_sr();
    let thetas = run_finetune(&problem, &nlls, 0).unwrap();
    let last = thetas.last().unwrap();
    let test = seq.test();
    let first = accuracy(&problem.spec, last, test[0].x(), test[0].y());
    let current = accuracy(&problem.spec, last, test[2].x(), test[2].y());
    assert!(current >= 0.9, "last task accuracy {current}");
    assert!(first < 1.0 / 3.0 + 0.1, "first task accuracy {first}");
}

#[test]
fn joint_and_finetune_share_the_first_task() {
    let (problem, _, nlls) = iris_sr();
    let ft = run_finetune(&problem, &nlls[..1], 4).unwrap();
    let joint = run_joint(&problem, &nlls[..1], 4).unwrap();
    assert_eq!(ft, joint);
}

#[test]
fn exact_joint_loss_decomposes_by_task() {
    let (_, _, nlls) = iris_sr();
    let theta = normal_vector(&mut rng(5), 15, 0.3);
    for t in 1..=3 {
        let ft = RecursiveLoss::new(Arc::new(Penalty::GaussianPrior), nlls[t - 1].clone()).unwrap();
        let retained: f64 = nlls[..t - 1].iter().map(|n| value(n, &theta).unwrap()).sum();
        let total = exact_joint_loss(&nlls[..t], &theta).unwrap();
        let expect = value(&ft, &theta).unwrap() + retained;
        assert!((total - expect).abs() <= 1e-12 * total.abs().max(1.0));
        let prev = exact_joint_loss(&nlls[..t - 1], &theta).unwrap();
        assert!((total - prev - value(&nlls[t - 1], &theta).unwrap()).abs() <= 1e-12 * total.abs().max(1.0));
    }
}

fn trained_first_task(epochs: usize) -> (RecursiveLoss, ParamVector) {
    let (mut problem, _, nlls) = iris_sr();
    problem.train.epochs = epochs;
    let mut learner = Learner::new(&problem, Method::Finetune, 0).unwrap();
    learner.step(&problem, &nlls[..1]).unwrap();
    let loss = RecursiveLoss::new(Arc::new(Penalty::GaussianPrior), nlls[0].clone()).unwrap();
    (loss, learner.theta)
}

#[test]
fn training_converges_on_a_convex_task() {
    let (loss, theta) = trained_first_task(100);
    let (_, g) = value_and_grad(&loss, &theta).unwrap();
    assert!(g.norm() < 1e-2, "gradient norm {}", g.norm());
}

#[test]
fn long_training_matches_a_gradient_descent_oracle() {
    let (loss, trained) = trained_first_task(1000);
    let (value_trained, _) = value_and_grad(&loss, &trained).unwrap();
    // plain gradient descent with a step below 1/L
    let lipschitz = {
        let h = to_dmatrix(&hessian(&loss, &trained).unwrap());
        h.symmetric_eigen().eigenvalues.max()
    };
    let mut theta = ParamVector::zeros(trained.len());
    for _ in 0..20_000 {
        let (_, g) = value_and_grad(&loss, &theta).unwrap();
        let next: Vec<f64> = theta
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(t, g)| t - g / (2.0 * lipschitz))
            .collect();
        theta = ParamVector::new(next).unwrap();
    }
    let (oracle, g) = value_and_grad(&loss, &theta).unwrap();
    assert!(g.norm() < 1e-6, "oracle gradient norm {}", g.norm());
    assert!((value_trained - oracle).abs() <= 1e-3, "trained {value_trained} vs oracle {oracle}");
}

#[test]
fn runs_are_deterministic() {
    let (mut problem, _, nlls) = iris_sr();
    problem.consolidator = ConsolidatorConfig {
        hidden: vec![16, 16],
        fit_steps: 50,
        ..ConsolidatorConfig::default()
    };
    problem.train.epochs = 10;
    for method in [
        Method::Finetune,
        Method::Joint,
        Method::Aqc { lambda: 10.0 },
        Method::Ewc { lambda: 10.0 },
        Method::Si { lambda: 10.0, xi: 0.1 },
        Method::Nc { lambda: 1.0, radius: 1.0 },
    ] {
        let a = run_sequence(&problem, method, &nlls, 9, |_, _| Ok(())).unwrap();
        let b = run_sequence(&problem, method, &nlls, 9, |_, _| Ok(())).unwrap();
        assert_eq!(a, b, "{}", method.name());
        let c = run_sequence(&problem, method, &nlls, 10, |_, _| Ok(())).unwrap();
        assert_ne!(a.theta, c.theta, "{}", method.name());
    }
}

#[test]
fn every_penalty_vanishes_at_its_anchor_after_training() {
    let (mut problem, _, nlls) = iris_sr();
    problem.consolidator.fit_steps = 100;
    problem.train.epochs = 20;
    for method in [
        Method::Aqc { lambda: 10.0 },
        Method::Ewc { lambda: 10.0 },
        Method::Si { lambda: 10.0, xi: 0.1 },
        Method::Nc { lambda: 1.0, radius: 1.0 },
    ] {
        let learner = run_sequence(&problem, method, &nlls[..2], 0, |_, _| Ok(())).unwrap();
        let p = learner.penalty().unwrap();
        assert_eq!(p.value(&learner.anchor()).unwrap(), 0.0, "{}", method.name());
    }
}

#[test]
fn consolidator_fits_a_quadratic_surface() {
    let a = [0.5, -1.0];
    let center = ParamVector::new(vec![0.3, -0.7]).unwrap();
    let target = |pts: &[ParamVector]| -> seqmap::Result<Vec<f64>> {
        Ok(pts
            .iter()
            .map(|p| 0.5 * p.as_slice().iter().zip(a).map(|(x, c)| (x - c).powi(2)).sum::<f64>())
            .collect())
    };
    let cfg = ConsolidatorConfig::default();
    let c = fit_consolidator(target, &center, 1.0, &cfg, None, 11).unwrap();
    let held_out = sample_uniform_ball(&center, 1.0, 2000, 12).unwrap();
    let rows: Vec<Vec<f64>> = held_out.iter().map(|p| p.as_slice().to_vec()).collect();
    let pred = c.evaluate(&Matrix::from_rows(&rows).unwrap()).unwrap();
    let truth = target(&held_out).unwrap();
    let err = pred.iter().zip(&truth).map(|(p, t)| huber(*p, *t, 1.0)).sum::<f64>() / truth.len() as f64;
    assert!(err <= 1e-2, "mean Huber error {err}");
}

#[test]
fn ball_sampler_fills_the_disc_uniformly() {
    let center = ParamVector::new(vec![1.0, -2.0]).unwrap();
    let r = 3.0;
    let pts = sample_uniform_ball(&center, r, 100_000, 13).unwrap();
    let inner = pts.iter().filter(|p| p.distance(&center) <= r / 2f64.sqrt()).count() as f64 / 1e5;
    assert!((inner - 0.5).abs() <= 0.01, "inner fraction {inner}");
    assert!(pts.iter().all(|p| p.distance(&center) <= r * (1.0 + 1e-12)));
    let still = sample_uniform_ball(&center, 0.0, 5, 13).unwrap();
    assert!(still.iter().all(|p| *p == center));
}

#[test]
fn fresh_learners_encode_the_prior() {
    let (problem, _, _) = iris_sr();
    let theta = init_params(&problem.spec, 1).unwrap();
    for method in [Method::Aqc { lambda: 1.0 }, Method::Ewc { lambda: 1.0 }] {
        let learner = Learner::new(&problem, method, 0).unwrap();
        let p = learner.penalty().unwrap().value(&theta).unwrap();
        let prior = 0.5 * theta.norm().powi(2);
        assert!((p - prior).abs() <= 1e-12 * prior, "{}", method.name());
    }
}
