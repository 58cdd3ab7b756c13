#![allow(dead_code)]

pub mod families;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use seqmap::ad::{value, value_and_grad, HessianMatrix, Matrix, Objective, ParamVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z })
        .collect::<Vec<f64>>();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn normal_vector(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> ParamVector {
    ParamVector::new(
        (0..d)
            .map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z })
            .collect(),
    )
    .unwrap()
}

pub fn labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn shifted(theta: &ParamVector, k: usize, h: f64) -> ParamVector {
    let mut v = theta.as_slice().to_vec();
    v[k] += h;
    ParamVector::new(v).unwrap()
}

/// Central differences of the value.
pub fn fd_gradient<O: Objective>(f: &O, theta: &ParamVector, h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let up = value(f, &shifted(theta, k, h)).unwrap();
            let down = value(f, &shifted(theta, k, -h)).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the exact gradient, symmetrized.
pub fn fd_hessian<O: Objective>(f: &O, theta: &ParamVector, h: f64) -> HessianMatrix {
    let d = theta.len();
    let mut e = vec![0.0; d * d];
    for k in 0..d {
        let (_, up) = value_and_grad(f, &shifted(theta, k, h)).unwrap();
        let (_, down) = value_and_grad(f, &shifted(theta, k, -h)).unwrap();
        for i in 0..d {
            e[i * d + k] = (up.as_slice()[i] - down.as_slice()[i]) / (2.0 * h);
        }
    }
    let mut m = HessianMatrix::from_row_major(d, e).unwrap();
    m.symmetrize();
    m
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Tolerances of the derivative oracles.
pub const GRAD_TOL: f64 = 1e-5;
pub const HESS_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

/// Relative errors of the exact gradient and Hessian against central
/// differences at `theta`.
pub fn derivative_errors<O: Objective>(f: &O, theta: &ParamVector) -> (f64, f64) {
    let (_, g) = value_and_grad(f, theta).unwrap();
    let eg = rel_err(g.as_slice(), &fd_gradient(f, theta, FD_STEP), 1e-8);
    let h = seqmap::ad::hessian(f, theta).unwrap();
    let eh = rel_err(h.as_slice(), fd_hessian(f, theta, FD_STEP).as_slice(), 1e-8);
    (eg, eh)
}
