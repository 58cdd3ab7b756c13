//! Exact first and second derivatives of scalar objectives.
//!
//! Gradients come from a reverse sweep over a tensor tape ([`Graph`]).
//! Hessians are the Jacobian of that gradient: the reverse sweep is rerun
//! once per coordinate over [`Dual`] numbers seeded with the unit vector
//! `e_k`, and the tangent part of the resulting gradient is column `k`.

mod graph;
mod scalar;
mod tensor;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use graph::{huber_loss, Gradients, Graph, Var};
pub use scalar::{Dual, Scalar};
pub use tensor::{Matrix, Tensor};

use crate::error::{Error, Result};

/// Flat vector of all trainable parameters of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter entry {i}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn as_row(&self) -> Matrix {
        Tensor::from_vec(1, self.0.len(), self.0.clone()).expect("row shape")
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// Square symmetric matrix over parameter coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl HessianMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut h = Self::zeros(dim);
        for i in 0..dim {
            h.entries[i * dim + i] = 1.0;
        }
        h
    }

    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "{dim}x{dim} matrix needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `max |H − Hᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut m = 0.0f64;
        for i in 0..d {
            for j in i + 1..d {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Replaces `H` by `(H + Hᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in i + 1..d {
                let avg = 0.5 * (self.entries[i * d + j] + self.entries[j * d + i]);
                self.entries[i * d + j] = avg;
                self.entries[j * d + i] = avg;
            }
        }
    }

    pub fn add_assign(&mut self, other: &HessianMatrix) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Dimension(format!(
                "adding {0}x{0} to {1}x{1} matrix",
                other.dim, self.dim
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * c).collect(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs_diff(&self, other: &HessianMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// A twice-differentiable map from a parameter vector to a real number.
///
/// Implementors record their computation on the supplied tape; the same
/// code path serves values, gradients and Hessian columns.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Records the objective on `g` with `theta` a `1×d` node and returns the `1×1` output.
    fn record<T: Scalar>(&self, g: &mut Graph<T>, theta: Var) -> Result<Var>;
}

fn check_dim<O: Objective>(f: &O, theta: &ParamVector) -> Result<()> {
    if theta.len() != f.dim() {
        return Err(Error::Dimension(format!(
            "objective over {} parameters evaluated at vector of length {}",
            f.dim(),
            theta.len()
        )));
    }
    Ok(())
}

fn non_finite<T: Scalar>(g: &Graph<T>, what: &str) -> Error {
    match g.first_non_finite() {
        Some(op) => Error::NonFinite(format!("{what} (first produced by {op})")),
        None => Error::NonFinite(what.to_string()),
    }
}

/// Objective value only.
pub fn value<O: Objective>(f: &O, theta: &ParamVector) -> Result<f64> {
    check_dim(f, theta)?;
    let mut g = Graph::<f64>::new();
    let p = g.input(theta.as_row());
    let out = f.record(&mut g, p)?;
    let v = g.value(out).scalar();
    if !v.is_finite() {
        return Err(non_finite(&g, "objective value"));
    }
    Ok(v)
}

/// Objective value and its exact gradient.
pub fn value_and_grad<O: Objective>(f: &O, theta: &ParamVector) -> Result<(f64, ParamVector)> {
    check_dim(f, theta)?;
    let mut g = Graph::<f64>::new();
    let p = g.input(theta.as_row());
    let out = f.record(&mut g, p)?;
    let v = g.value(out).scalar();
    if !v.is_finite() {
        return Err(non_finite(&g, "objective value"));
    }
    let grads = g.backward(out)?;
    let grad = match grads.get(p) {
        Some(t) => t.as_slice().to_vec(),
        None => vec![0.0; theta.len()],
    };
    if let Some(k) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {k}")));
    }
    Ok((v, ParamVector(grad)))
}

/// Column `k` of the Hessian: derivative of the gradient along `e_k`.
fn hessian_column<O: Objective>(f: &O, theta: &ParamVector, k: usize) -> Result<Vec<f64>> {
    let seeded: Vec<Dual> = theta
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::new(v, if i == k { 1.0 } else { 0.0 }))
        .collect();
    let mut g = Graph::<Dual>::new();
    let p = g.input(Tensor::from_vec(1, seeded.len(), seeded)?);
    let out = f.record(&mut g, p)?;
    let grads = g.backward(out)?;
    let col: Vec<f64> = match grads.get(p) {
        Some(t) => t.as_slice().iter().map(|d| d.eps).collect(),
        None => vec![0.0; theta.len()],
    };
    if let Some(i) = col.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Hessian entry ({i}, {k})")));
    }
    Ok(col)
}

/// Hessian before symmetrization, as the Jacobian of the gradient.
pub fn hessian_unsymmetrized<O: Objective>(f: &O, theta: &ParamVector) -> Result<HessianMatrix> {
    check_dim(f, theta)?;
    let d = theta.len();
    let cols: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|k| hessian_column(f, theta, k))
        .collect::<Result<_>>()?;
    let mut entries = vec![0.0; d * d];
    for (k, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            entries[i * d + k] = v;
        }
    }
    HessianMatrix::from_row_major(d, entries)
}

/// Exact symmetrized Hessian.
pub fn hessian<O: Objective>(f: &O, theta: &ParamVector) -> Result<HessianMatrix> {
    let mut h = hessian_unsymmetrized(f, theta)?;
    h.symmetrize();
    Ok(h)
}

/// Sum of per-batch Hessians; equals the Hessian of the summed objective.
pub fn accumulate_hessian_over_batches<O: Objective>(
    batches: &[O],
    theta: &ParamVector,
) -> Result<HessianMatrix> {
    let Some(first) = batches.first() else {
        return Err(Error::Invalid("no batches to accumulate".into()));
    };
    let mut acc = hessian(first, theta)?;
    for b in &batches[1..] {
        acc.add_assign(&hessian(b, theta)?)?;
    }
    Ok(acc)
}
