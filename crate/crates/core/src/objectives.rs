//! Loss terms and the recursive training objective.
//!
//! Every negative log likelihood is a sum over examples, so losses on a
//! partition of the data (and their Hessians) add up exactly.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::{self, Graph, HessianMatrix, Matrix, Objective, ParamVector, Scalar, Var};
use crate::error::{Error, Result};
use crate::nn::{Head, ModelSpec};

/// Default Huber threshold for consolidator fitting.
pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    #[default]
    Categorical,
    Bernoulli,
    WeightedCategorical,
}

#[derive(Clone, Debug)]
enum Targets {
    Classes(Arc<Vec<usize>>),
    Real(Arc<Vec<f64>>),
}

#[derive(Clone, Debug)]
enum Link {
    Softmax { class_weights: Option<Arc<Vec<f64>>> },
    Logistic,
    Gaussian,
}

/// Negative log likelihood of a model over a fixed data context.
#[derive(Clone, Debug)]
pub struct Nll {
    spec: ModelSpec,
    x: Arc<Matrix>,
    targets: Targets,
    link: Link,
}

/// `m / n_i` with `m` the smallest class count.
pub fn class_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    if class_counts.is_empty() {
        return Err(Error::Invalid("no class counts".into()));
    }
    if let Some(i) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::Invalid(format!("class {i} has zero count")));
    }
    let m = *class_counts.iter().min().expect("nonempty") as f64;
    Ok(class_counts.iter().map(|&n| m / n as f64).collect())
}

impl Nll {
    /// Classification likelihood. `class_counts` is required for the weighted
    /// cross entropy and ignored otherwise.
    pub fn classification(
        spec: ModelSpec,
        x: Arc<Matrix>,
        labels: Arc<Vec<usize>>,
        kind: LikelihoodKind,
        class_counts: Option<&[usize]>,
    ) -> Result<Self> {
        spec.validate()?;
        if x.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} input rows for {} labels",
                x.rows(),
                labels.len()
            )));
        }
        if x.cols() != spec.input_dim {
            return Err(Error::Dimension(format!(
                "model expects {} input columns, data has {}",
                spec.input_dim,
                x.cols()
            )));
        }
        let link = match (kind, spec.head) {
            (LikelihoodKind::Categorical, Head::Categorical) => Link::Softmax {
                class_weights: None,
            },
            (LikelihoodKind::WeightedCategorical, Head::Categorical) => {
                let counts = class_counts.ok_or_else(|| {
                    Error::Invalid("weighted cross entropy needs class counts".into())
                })?;
                if counts.len() != spec.output_dim {
                    return Err(Error::Dimension(format!(
                        "{} class counts for {} classes",
                        counts.len(),
                        spec.output_dim
                    )));
                }
                Link::Softmax {
                    class_weights: Some(Arc::new(class_weights(counts)?)),
                }
            }
            (LikelihoodKind::Bernoulli, Head::Bernoulli) => Link::Logistic,
            (k, h) => {
                return Err(Error::Invalid(format!(
                    "{k:?} likelihood does not fit a {h:?} head"
                )))
            }
        };
        let bound = match link {
            Link::Logistic => 2,
            _ => spec.output_dim,
        };
        if let Some(&bad) = labels.iter().find(|&&y| y >= bound) {
            return Err(Error::Invalid(format!("label {bad} outside [0, {bound})")));
        }
        Ok(Self {
            spec,
            x,
            targets: Targets::Classes(labels),
            link,
        })
    }

    /// Unit-variance Gaussian likelihood, `½ Σ (y − f(x))²`, for a scalar head.
    pub fn least_squares(spec: ModelSpec, x: Arc<Matrix>, y: Arc<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        if spec.head != Head::Scalar {
            return Err(Error::Invalid("least squares needs a scalar head".into()));
        }
        if x.rows() != y.len() || x.cols() != spec.input_dim {
            return Err(Error::Dimension(format!(
                "data of shape {:?} with {} targets for input width {}",
                x.shape(),
                y.len(),
                spec.input_dim
            )));
        }
        Ok(Self {
            spec,
            x,
            targets: Targets::Real(y),
            link: Link::Gaussian,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn inputs(&self) -> &Matrix {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// The same likelihood restricted to `rows`.
    pub fn subset(&self, rows: &[usize]) -> Nll {
        let x = Arc::new(self.x.select_rows(rows));
        let targets = match &self.targets {
            Targets::Classes(y) => Targets::Classes(Arc::new(rows.iter().map(|&i| y[i]).collect())),
            Targets::Real(y) => Targets::Real(Arc::new(rows.iter().map(|&i| y[i]).collect())),
        };
        Nll {
            spec: self.spec.clone(),
            x,
            targets,
            link: self.link.clone(),
        }
    }

    /// Consecutive row chunks of at most `batch_size` rows.
    pub fn batches(&self, batch_size: usize) -> Vec<Nll> {
        let n = self.len();
        let bs = batch_size.max(1);
        (0..n)
            .step_by(bs)
            .map(|s| {
                let rows: Vec<usize> = (s..(s + bs).min(n)).collect();
                self.subset(&rows)
            })
            .collect()
    }

    /// Per-example likelihoods.
    pub fn examples(&self) -> Vec<Nll> {
        self.batches(1)
    }

    /// Rows of several likelihoods of the same kind stacked into one.
    pub fn concat(parts: &[Nll]) -> Result<Nll> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
        let x = Matrix::vstack(parts.iter().map(|p| p.x.as_ref()))?;
        let targets = match &first.targets {
            Targets::Classes(_) => {
                let mut y = Vec::new();
                for p in parts {
                    match &p.targets {
                        Targets::Classes(v) => y.extend_from_slice(v),
                        Targets::Real(_) => {
                            return Err(Error::Invalid("mixed target kinds".into()))
                        }
                    }
                }
                Targets::Classes(Arc::new(y))
            }
            Targets::Real(_) => {
                let mut y = Vec::new();
                for p in parts {
                    match &p.targets {
                        Targets::Real(v) => y.extend_from_slice(v),
                        Targets::Classes(_) => {
                            return Err(Error::Invalid("mixed target kinds".into()))
                        }
                    }
                }
                Targets::Real(Arc::new(y))
            }
        };
        if parts.iter().any(|p| p.spec != first.spec) {
            return Err(Error::Invalid("cannot concatenate likelihoods of different models".into()));
        }
        Ok(Nll {
            spec: first.spec.clone(),
            x: Arc::new(x),
            targets,
            link: first.link.clone(),
        })
    }

    /// Records the loss on already computed logits.
    fn record_link<T: Scalar>(&self, g: &mut Graph<T>, logits: Var) -> Result<Var> {
        match (&self.link, &self.targets) {
            (Link::Softmax { class_weights, .. }, Targets::Classes(y)) => {
                let w = class_weights
                    .as_ref()
                    .map(|cw| Arc::new(y.iter().map(|&c| cw[c]).collect::<Vec<_>>()));
                g.softmax_xent(logits, y.clone(), w)
            }
            (Link::Logistic, Targets::Classes(y)) => g.logistic_xent(logits, y.clone()),
            (Link::Gaussian, Targets::Real(y)) => g.squared_error(logits, y.clone()),
            _ => Err(Error::Invalid("likelihood and targets disagree".into())),
        }
    }
}

impl Objective for Nll {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn record<T: Scalar>(&self, g: &mut Graph<T>, theta: Var) -> Result<Var> {
        let x = g.constant_f64(&self.x);
        let logits = self.spec.record_forward(g, theta, x)?;
        self.record_link(g, logits)
    }
}

fn logits_node(g: &mut Graph<f64>, logits: &Matrix) -> Var {
    g.constant(logits.clone())
}

/// `Σ_rows −log softmax(z)[y]`.
pub fn categorical_nll(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let z = logits_node(&mut g, logits);
    let out = g.softmax_xent(z, Arc::new(labels.to_vec()), None)?;
    Ok(g.value(out).scalar())
}

/// `Σ_rows −[y log σ(z) + (1 − y) log(1 − σ(z))]` for a single logit column.
pub fn bernoulli_nll(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let z = logits_node(&mut g, logits);
    let out = g.logistic_xent(z, Arc::new(labels.to_vec()))?;
    Ok(g.value(out).scalar())
}

/// `Σ_rows (m / n_y) · (−log softmax(z)[y])`, `m = min class count`.
pub fn weighted_categorical_nll(
    logits: &Matrix,
    labels: &[usize],
    class_counts: &[usize],
) -> Result<f64> {
    let cw = class_weights(class_counts)?;
    if class_counts.len() != logits.cols() {
        return Err(Error::Dimension(format!(
            "{} class counts for {} logit columns",
            class_counts.len(),
            logits.cols()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= cw.len()) {
        return Err(Error::Invalid(format!("label {bad} outside [0, {})", cw.len())));
    }
    let w = labels.iter().map(|&y| cw[y]).collect();
    let mut g = Graph::new();
    let z = logits_node(&mut g, logits);
    let out = g.softmax_xent(z, Arc::new(labels.to_vec()), Some(Arc::new(w)))?;
    Ok(g.value(out).scalar())
}

/// Negative log density of the standard Gaussian prior, up to a constant.
pub fn gaussian_prior(theta: &ParamVector) -> f64 {
    0.5 * theta.as_slice().iter().map(|v| v * v).sum::<f64>()
}

/// Huber loss of `a − b`.
pub fn huber(a: f64, b: f64, delta: f64) -> f64 {
    ad::huber_loss(a - b, delta)
}

/// Curvature of a quadratic penalty: the accumulated full Hessian, or a
/// nonnegative diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Curvature {
    Full(HessianMatrix),
    Diagonal(Vec<f64>),
}

impl Curvature {
    pub fn dim(&self) -> usize {
        match self {
            Curvature::Full(h) => h.dim(),
            Curvature::Diagonal(v) => v.len(),
        }
    }
}

/// Anchor and accumulated curvature of a quadratic consolidation penalty.
///
/// The initial state (identity curvature, zero anchor, nothing consolidated)
/// encodes the standard Gaussian prior `½‖θ‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyState {
    pub anchor: ParamVector,
    pub curvature: Curvature,
    pub tasks_consolidated: usize,
}

impl PenaltyState {
    pub fn initial_full(d: usize) -> Self {
        Self {
            anchor: ParamVector::zeros(d),
            curvature: Curvature::Full(HessianMatrix::identity(d)),
            tasks_consolidated: 0,
        }
    }

    pub fn initial_diagonal(d: usize) -> Self {
        Self {
            anchor: ParamVector::zeros(d),
            curvature: Curvature::Diagonal(vec![1.0; d]),
            tasks_consolidated: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// The training penalty for the next task. Before any task has been
    /// consolidated this is the prior itself, so `λ` is not applied.
    pub fn penalty(&self, lambda: f64) -> Result<Penalty> {
        let lambda = if self.tasks_consolidated == 0 { 1.0 } else { lambda };
        Penalty::quadratic(self, lambda)
    }
}

/// Scalar-output surrogate network approximating a previous loss surface.
///
/// `baseline` is subtracted from the network output when used as a penalty,
/// so anchoring at a point makes the penalty vanish there without changing
/// its minimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Consolidator {
    pub spec: ModelSpec,
    pub params: ParamVector,
    #[serde(default)]
    pub baseline: f64,
}

impl Consolidator {
    pub fn new(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        if spec.head != Head::Scalar {
            return Err(Error::Invalid("consolidator needs a scalar head".into()));
        }
        if params.len() != spec.param_count() {
            return Err(Error::Dimension(format!(
                "consolidator has {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            spec,
            params,
            baseline: 0.0,
        })
    }

    /// Sets the baseline to `κ(anchor)`.
    pub fn anchored_at(mut self, anchor: &ParamVector) -> Result<Self> {
        let k = self.evaluate(&anchor.as_row())?;
        self.baseline = k[0];
        Ok(self)
    }

    /// `κ(θ_i; φ)` for every row of `points`.
    pub fn evaluate(&self, points: &Matrix) -> Result<Vec<f64>> {
        Ok(crate::nn::forward(&self.spec, &self.params, points)?.into_vec())
    }
}

#[derive(Clone, Debug)]
pub enum CurvatureData {
    Full(Arc<Vec<f64>>),
    Diagonal(Arc<Vec<f64>>),
}

/// The regularizer standing in for the previous loss.
#[derive(Clone, Debug)]
pub enum Penalty {
    /// `½‖θ‖²`.
    GaussianPrior,
    /// `(λ/2)(θ − θ*)ᵀ H (θ − θ*)`.
    Quadratic {
        anchor: Arc<Matrix>,
        curvature: CurvatureData,
        lambda: f64,
    },
    /// `λ (κ(θ; φ*) − baseline)`.
    Neural {
        consolidator: Arc<Consolidator>,
        lambda: f64,
    },
}

impl Penalty {
    pub fn quadratic(state: &PenaltyState, lambda: f64) -> Result<Penalty> {
        if state.curvature.dim() != state.anchor.len() {
            return Err(Error::Dimension(format!(
                "curvature of dimension {} with anchor of length {}",
                state.curvature.dim(),
                state.anchor.len()
            )));
        }
        let curvature = match &state.curvature {
            Curvature::Full(h) => CurvatureData::Full(Arc::new(h.as_slice().to_vec())),
            Curvature::Diagonal(w) => CurvatureData::Diagonal(Arc::new(w.clone())),
        };
        Ok(Penalty::Quadratic {
            anchor: Arc::new(state.anchor.as_row()),
            curvature,
            lambda,
        })
    }

    pub fn neural(consolidator: Consolidator, lambda: f64) -> Penalty {
        Penalty::Neural {
            consolidator: Arc::new(consolidator),
            lambda,
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let expected = match self {
            Penalty::GaussianPrior => return Ok(()),
            Penalty::Quadratic { anchor, .. } => anchor.cols(),
            Penalty::Neural { consolidator, .. } => consolidator.spec.input_dim,
        };
        if expected != d {
            return Err(Error::Dimension(format!(
                "penalty over {expected} parameters applied to vector of length {d}"
            )));
        }
        Ok(())
    }

    pub fn record<T: Scalar>(&self, g: &mut Graph<T>, theta: Var) -> Result<Var> {
        self.check_dim(g.value(theta).as_slice().len())?;
        match self {
            Penalty::GaussianPrior => {
                let sq = g.mul(theta, theta)?;
                let s = g.sum(sq);
                Ok(g.scale(s, 0.5))
            }
            Penalty::Quadratic {
                anchor,
                curvature,
                lambda,
            } => {
                let a = g.constant_f64(anchor);
                let diff = g.sub(theta, a)?;
                let q = match curvature {
                    CurvatureData::Full(h) => g.quad_form(diff, h.clone())?,
                    CurvatureData::Diagonal(w) => g.diag_quad_form(diff, w.clone())?,
                };
                Ok(g.scale(q, 0.5 * lambda))
            }
            Penalty::Neural {
                consolidator,
                lambda,
            } => {
                let phi = g.constant_f64(&consolidator.params.as_row());
                let out = consolidator.spec.record_forward(g, phi, theta)?;
                let s = g.sum(out);
                let s = g.scale(s, *lambda);
                if consolidator.baseline == 0.0 {
                    return Ok(s);
                }
                let b = g.constant_f64(&Matrix::filled(1, 1, lambda * consolidator.baseline));
                g.sub(s, b)
            }
        }
    }

    pub fn value(&self, theta: &ParamVector) -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let p = g.constant(theta.as_row());
        let out = self.record(&mut g, p)?;
        Ok(g.value(out).scalar())
    }

    /// Penalty at many points; the neural penalty is evaluated as one batch.
    pub fn values_at(&self, points: &[ParamVector]) -> Result<Vec<f64>> {
        match self {
            Penalty::Neural {
                consolidator,
                lambda,
            } => {
                let rows: Vec<Vec<f64>> = points.iter().map(|p| p.as_slice().to_vec()).collect();
                let x = Matrix::from_rows(&rows)?;
                let k = consolidator.evaluate(&x)?;
                Ok(k.into_iter()
                    .map(|v| lambda * (v - consolidator.baseline))
                    .collect())
            }
            _ => points.iter().map(|p| self.value(p)).collect(),
        }
    }
}

/// `(λ/2)(θ − θ*)ᵀ H (θ − θ*)`, elementwise for a diagonal `H`.
pub fn quadratic_penalty(state: &PenaltyState, theta: &ParamVector, lambda: f64) -> Result<f64> {
    if theta.len() != state.dim() {
        return Err(Error::Dimension(format!(
            "penalty over {} parameters applied to vector of length {}",
            state.dim(),
            theta.len()
        )));
    }
    Penalty::quadratic(state, lambda)?.value(theta)
}

/// `λ (κ(θ; φ*) − baseline)`.
pub fn neural_penalty(consolidator: &Consolidator, theta: &ParamVector, lambda: f64) -> Result<f64> {
    Penalty::neural(consolidator.clone(), lambda).value(theta)
}

/// Regularizer plus the current task's likelihood. When trained per
/// mini-batch the regularizer is divided by the number of mini-batches so
/// one epoch adds up to the full objective.
#[derive(Clone, Debug)]
pub struct RecursiveLoss {
    penalty: Arc<Penalty>,
    nll: Nll,
    minibatch_count: usize,
}

impl RecursiveLoss {
    pub fn new(penalty: Arc<Penalty>, nll: Nll) -> Result<Self> {
        penalty.check_dim(nll.dim())?;
        Ok(Self {
            penalty,
            nll,
            minibatch_count: 1,
        })
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    pub fn nll(&self) -> &Nll {
        &self.nll
    }

    pub fn minibatch_count(&self) -> usize {
        self.minibatch_count
    }

    /// The per-batch objective for `rows` out of `count` mini-batches.
    pub fn minibatch(&self, rows: &[usize], count: usize) -> RecursiveLoss {
        RecursiveLoss {
            penalty: self.penalty.clone(),
            nll: self.nll.subset(rows),
            minibatch_count: count.max(1),
        }
    }

    /// Full objective at many points.
    pub fn values_at(&self, points: &[ParamVector]) -> Result<Vec<f64>> {
        let pen = self.penalty.values_at(points)?;
        let nll: Vec<f64> = points
            .par_iter()
            .map(|p| ad::value(&self.nll, p))
            .collect::<Result<_>>()?;
        let scale = 1.0 / self.minibatch_count as f64;
        Ok(pen.iter().zip(&nll).map(|(p, n)| p * scale + n).collect())
    }
}

impl Objective for RecursiveLoss {
    fn dim(&self) -> usize {
        self.nll.dim()
    }

    fn record<T: Scalar>(&self, g: &mut Graph<T>, theta: Var) -> Result<Var> {
        let pen = self.penalty.record(g, theta)?;
        let pen = if self.minibatch_count > 1 {
            g.scale(pen, 1.0 / self.minibatch_count as f64)
        } else {
            pen
        };
        let nll = self.nll.record(g, theta)?;
        g.add(pen, nll)
    }
}

/// `½‖θ‖² + Σ_i l_i(θ)` over every retained task.
pub fn exact_joint_loss(nlls: &[Nll], theta: &ParamVector) -> Result<f64> {
    let mut total = gaussian_prior(theta);
    for nll in nlls {
        total += ad::value(nll, theta)?;
    }
    Ok(total)
}
