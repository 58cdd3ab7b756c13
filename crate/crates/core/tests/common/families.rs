//! One representative objective per family, with its derivative errors.

use std::sync::Arc;

use seqmap::ad::{Graph, HessianMatrix, Objective, ParamVector, Scalar, Var};
use seqmap::methods::ConsolidatorFit;
use seqmap::nn::{init_params, Head, ModelSpec};
use seqmap::objectives::{
    Consolidator, Curvature, LikelihoodKind, Nll, Penalty, PenaltyState, RecursiveLoss,
};
use seqmap::Result;

use super::*;

/// A penalty on its own, as an objective.
pub struct PenaltyObjective {
    pub penalty: Penalty,
    pub dim: usize,
}

impl Objective for PenaltyObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn record<T: Scalar>(&self, g: &mut Graph<T>, theta: Var) -> Result<Var> {
        self.penalty.record(g, theta)
    }
}

/// Gradient error, Hessian error and parameter count.
pub type Errors = (f64, f64, usize);

fn measure<O: Objective>(f: &O, theta: &ParamVector) -> Errors {
    let (g, h) = derivative_errors(f, theta);
    (g, h, f.dim())
}

pub fn classification(spec: &ModelSpec, n: usize, kind: LikelihoodKind, seed: u64) -> (Nll, ParamVector) {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, n, spec.input_dim, 1.0);
    let k = if spec.head == Head::Bernoulli { 2 } else { spec.output_dim };
    let y = labels(&mut r, n, k);
    let counts: Vec<usize> = (0..k).map(|c| y.iter().filter(|&&v| v == c).count().max(1)).collect();
    let nll = Nll::classification(spec.clone(), Arc::new(x), Arc::new(y), kind, Some(&counts)).unwrap();
    let theta = init_params(spec, seed + 100).unwrap();
    (nll, theta)
}

fn nll_family(input: usize, hidden: Vec<usize>, output: usize, head: Head, kind: LikelihoodKind, n: usize, seed: u64) -> Errors {
    let spec = ModelSpec::new(input, hidden, output, head).unwrap();
    let (nll, theta) = classification(&spec, n, kind, seed);
    measure(&nll, &theta)
}

pub fn categorical_sr() -> Errors {
    nll_family(4, vec![], 3, Head::Categorical, LikelihoodKind::Categorical, 40, 1)
}

/// 8-24-3, 291 parameters.
pub fn categorical_fcnn() -> Errors {
    nll_family(8, vec![24], 3, Head::Categorical, LikelihoodKind::Categorical, 30, 2)
}

pub fn categorical_two_hidden() -> Errors {
    nll_family(3, vec![6, 5], 4, Head::Categorical, LikelihoodKind::Categorical, 25, 3)
}

/// 2-4-3 on 8 points.
pub fn fcnn_2_4_3() -> Errors {
    nll_family(2, vec![4], 3, Head::Categorical, LikelihoodKind::Categorical, 8, 4)
}

pub fn bernoulli() -> Errors {
    nll_family(5, vec![7], 1, Head::Bernoulli, LikelihoodKind::Bernoulli, 30, 5)
}

pub fn weighted_categorical() -> Errors {
    nll_family(4, vec![5], 3, Head::Categorical, LikelihoodKind::WeightedCategorical, 30, 6)
}

pub fn least_squares() -> Errors {
    let spec = ModelSpec::new(3, vec![6], 1, Head::Scalar).unwrap();
    let mut r = rng(7);
    let x = normal_matrix(&mut r, 25, 3, 1.0);
    let y = normal_vector(&mut r, 25, 1.0).into_vec();
    let nll = Nll::least_squares(spec.clone(), Arc::new(x), Arc::new(y)).unwrap();
    measure(&nll, &init_params(&spec, 8).unwrap())
}

pub fn psd_matrix(r: &mut ChaCha8Rng, d: usize) -> HessianMatrix {
    let a = normal_matrix(r, d, d, 1.0);
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] = (0..d).map(|k| a.get(i, k) * a.get(j, k)).sum();
        }
    }
    HessianMatrix::from_row_major(d, h).unwrap()
}

pub fn gaussian_prior() -> Errors {
    let d = 12;
    let theta = normal_vector(&mut rng(9), d, 1.0);
    measure(&PenaltyObjective { penalty: Penalty::GaussianPrior, dim: d }, &theta)
}

pub fn full_quadratic() -> Errors {
    let d = 12;
    let mut r = rng(10);
    let theta = normal_vector(&mut r, d, 1.0);
    let state = PenaltyState {
        anchor: normal_vector(&mut r, d, 1.0),
        curvature: Curvature::Full(psd_matrix(&mut r, d)),
        tasks_consolidated: 2,
    };
    measure(&PenaltyObjective { penalty: state.penalty(3.5).unwrap(), dim: d }, &theta)
}

pub fn diagonal_quadratic() -> Errors {
    let d = 12;
    let mut r = rng(11);
    let theta = normal_vector(&mut r, d, 1.0);
    let state = PenaltyState {
        anchor: normal_vector(&mut r, d, 1.0),
        curvature: Curvature::Diagonal((0..d).map(|i| 0.5 + i as f64).collect()),
        tasks_consolidated: 1,
    };
    measure(&PenaltyObjective { penalty: state.penalty(0.7).unwrap(), dim: d }, &theta)
}

pub fn neural_penalty() -> Errors {
    let d = 10;
    let spec = ModelSpec::new(d, vec![16, 16], 1, Head::Scalar).unwrap();
    let mut r = rng(12);
    let theta = normal_vector(&mut r, d, 1.0);
    let c = Consolidator::new(spec.clone(), init_params(&spec, 13).unwrap())
        .unwrap()
        .anchored_at(&normal_vector(&mut r, d, 1.0))
        .unwrap();
    measure(&PenaltyObjective { penalty: Penalty::neural(c, 2.5), dim: d }, &theta)
}

/// Quadratic penalty plus NLL, evaluated as one of five mini-batches.
pub fn aqc_minibatch_loss() -> Errors {
    let spec = ModelSpec::new(4, vec![3], 3, Head::Categorical).unwrap();
    let (nll, theta) = classification(&spec, 24, LikelihoodKind::Categorical, 14);
    let d = spec.param_count();
    let mut r = rng(15);
    let state = PenaltyState {
        anchor: normal_vector(&mut r, d, 0.5),
        curvature: Curvature::Full(psd_matrix(&mut r, d)),
        tasks_consolidated: 1,
    };
    let loss = RecursiveLoss::new(Arc::new(state.penalty(10.0).unwrap()), nll).unwrap();
    measure(&loss.minibatch(&[0, 3, 5, 7, 9], 5), &theta)
}

pub fn nc_loss() -> Errors {
    let spec = ModelSpec::new(4, vec![3], 3, Head::Categorical).unwrap();
    let (nll, theta) = classification(&spec, 24, LikelihoodKind::Categorical, 16);
    let cspec = ModelSpec::new(spec.param_count(), vec![8], 1, Head::Scalar).unwrap();
    let c = Consolidator::new(cspec.clone(), init_params(&cspec, 17).unwrap()).unwrap();
    let loss = RecursiveLoss::new(Arc::new(Penalty::neural(c, 3.0)), nll).unwrap();
    measure(&loss, &theta)
}

/// Huber fit of a 3-8-8-1 consolidator, as a function of its parameters.
pub fn consolidator_fit() -> Errors {
    let spec = ModelSpec::new(3, vec![8, 8], 1, Head::Scalar).unwrap();
    let mut r = rng(18);
    let points = normal_matrix(&mut r, 12, 3, 2.0);
    // both Huber branches
    let targets: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 0.1 * i as f64 } else { 8.0 }).collect();
    let fit = ConsolidatorFit::new(spec.clone(), points, targets, 0.1, 1.0).unwrap();
    measure(&fit, &init_params(&spec, 19).unwrap())
}

pub const ALL: [(&str, fn() -> Errors); 15] = [
    ("categorical softmax regression", categorical_sr),
    ("categorical FCNN", categorical_fcnn),
    ("categorical two hidden layers", categorical_two_hidden),
    ("FCNN 2-4-3", fcnn_2_4_3),
    ("bernoulli", bernoulli),
    ("weighted categorical", weighted_categorical),
    ("least squares", least_squares),
    ("gaussian prior", gaussian_prior),
    ("full quadratic penalty", full_quadratic),
    ("diagonal quadratic penalty", diagonal_quadratic),
    ("neural penalty", neural_penalty),
    ("AQC mini-batch loss", aqc_minibatch_loss),
    ("NC loss", nc_loss),
    ("consolidator fit", consolidator_fit),
    ("SI penalty", si_penalty),
];

pub fn si_penalty() -> Errors {
    let d = 9;
    let mut r = rng(20);
    let mut si = seqmap::methods::SiState::new(normal_vector(&mut r, d, 1.0));
    let g = normal_vector(&mut r, d, 1.0).into_vec();
    let before = si.theta_old.as_slice().to_vec();
    let after: Vec<f64> = before.iter().zip(&g).map(|(b, g)| b - 0.1 * g).collect();
    si.observe(&g, &before, &after);
    si.consolidate(&ParamVector::new(after).unwrap(), 0.1);
    let theta = normal_vector(&mut r, d, 1.0);
    measure(&PenaltyObjective { penalty: si.penalty(4.0).unwrap(), dim: d }, &theta)
}
