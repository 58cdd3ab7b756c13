//! Continual-learning methods as task-loop state machines.
//!
//! A [`Learner`] holds the current parameters and whatever a method keeps
//! between tasks (accumulated curvature, path integrals, a fitted
//! consolidator). Feeding it tasks in order yields `θ*_1, θ*_2, ...`.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::{
    accumulate_hessian_over_batches, value_and_grad, Graph, Matrix, Objective, ParamVector, Scalar,
    Var,
};
use crate::error::{Error, Result};
use crate::nn::{init_params, Head, ModelSpec};
use crate::objectives::{
    Consolidator, Curvature, LikelihoodKind, Nll, Penalty, PenaltyState, RecursiveLoss,
    DEFAULT_HUBER_DELTA,
};
use crate::optim::{one_cycle_lr, train, train_with_hook, Adam, AdamConfig, TrainConfig};

/// Which method to run, with its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Method {
    Finetune,
    Joint,
    Aqc { lambda: f64 },
    Ewc { lambda: f64 },
    Si { lambda: f64, xi: f64 },
    Nc { lambda: f64, radius: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Joint => "joint",
            Method::Aqc { .. } => "aqc",
            Method::Ewc { .. } => "ewc",
            Method::Si { .. } => "si",
            Method::Nc { .. } => "nc",
        }
    }

    /// Hyperparameters as `key=value` pairs joined by `;`, empty if none.
    pub fn hparams(&self) -> String {
        match *self {
            Method::Finetune | Method::Joint => String::new(),
            Method::Aqc { lambda } | Method::Ewc { lambda } => format!("lambda={lambda}"),
            Method::Si { lambda, xi } => format!("lambda={lambda};xi={xi}"),
            Method::Nc { lambda, radius } => format!("lambda={lambda};radius={radius}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Method::Finetune | Method::Joint => Ok(()),
            Method::Aqc { lambda } | Method::Ewc { lambda } => positive("lambda", lambda),
            Method::Si { lambda, xi } => {
                positive("lambda", lambda)?;
                positive("xi", xi)
            }
            Method::Nc { lambda, radius } => {
                positive("lambda", lambda)?;
                positive("radius", radius)
            }
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![256, 256]
}
fn default_sample_size() -> usize {
    64
}
fn default_fit_steps() -> usize {
    1000
}
fn default_beta() -> f64 {
    0.1
}
fn default_fit_lr() -> f64 {
    1e-2
}
fn default_delta() -> f64 {
    DEFAULT_HUBER_DELTA
}
fn default_reinit() -> bool {
    true
}

/// How neural consolidators are built and fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsolidatorConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Ball samples per fit step.
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_fit_steps")]
    pub fit_steps: usize,
    /// Weight decay on the consolidator parameters.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_fit_lr")]
    pub lr: f64,
    #[serde(default = "default_delta")]
    pub huber_delta: f64,
    /// Start each fit from fresh weights instead of the previous consolidator.
    #[serde(default = "default_reinit")]
    pub reinit: bool,
}

impl Default for ConsolidatorConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            sample_size: default_sample_size(),
            fit_steps: default_fit_steps(),
            beta: default_beta(),
            lr: default_fit_lr(),
            huber_delta: default_delta(),
            reinit: default_reinit(),
        }
    }
}

impl ConsolidatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 || self.fit_steps == 0 {
            return Err(Error::Invalid(
                "consolidator sample_size and fit_steps must be positive".into(),
            ));
        }
        if !(self.beta >= 0.0 && self.lr > 0.0 && self.huber_delta > 0.0) {
            return Err(Error::Invalid(format!(
                "consolidator settings out of range: beta {}, lr {}, huber_delta {}",
                self.beta, self.lr, self.huber_delta
            )));
        }
        Ok(())
    }

    pub fn spec(&self, input_dim: usize) -> Result<ModelSpec> {
        ModelSpec::new(input_dim, self.hidden.clone(), 1, Head::Scalar)
    }
}

/// Everything shared by the tasks of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub spec: ModelSpec,
    pub likelihood: LikelihoodKind,
    pub train: TrainConfig,
    /// Mini-batch size for Hessian accumulation; the training batch size if unset.
    pub hessian_batch_size: Option<usize>,
    pub consolidator: ConsolidatorConfig,
}

impl Problem {
    pub fn new(spec: ModelSpec, likelihood: LikelihoodKind, train: TrainConfig) -> Self {
        Self {
            spec,
            likelihood,
            train,
            hessian_batch_size: None,
            consolidator: ConsolidatorConfig::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn hessian_batch(&self) -> usize {
        self.hessian_batch_size.unwrap_or(self.train.batch_size).max(1)
    }
}

/// SplitMix64 finalizer; decorrelates per-task seeds derived from one run seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1 << 32;
const FIT_STREAM: u64 = 2 << 32;

/// `n` points uniform in the ball of radius `r` around `center`.
pub fn sample_uniform_ball(center: &ParamVector, r: f64, n: usize, seed: u64) -> Result<Vec<ParamVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_uniform_ball_with(&mut rng, center, r, n)
}

/// Direction from a normalized Gaussian draw, radius `r·U^(1/d)`.
pub fn sample_uniform_ball_with<R: Rng + ?Sized>(
    rng: &mut R,
    center: &ParamVector,
    r: f64,
    n: usize,
) -> Result<Vec<ParamVector>> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Invalid(format!("ball radius must be nonnegative, got {r}")));
    }
    let d = center.len();
    if d == 0 {
        return Err(Error::Dimension("ball in zero dimensions".into()));
    }
    let mut out = Vec::with_capacity(n);
    let mut dir = vec![0.0; d];
    for _ in 0..n {
        if r == 0.0 {
            out.push(center.clone());
            continue;
        }
        let norm = loop {
            for v in dir.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        let u: f64 = rng.random();
        let radius = r * u.powf(1.0 / d as f64);
        let p: Vec<f64> = center
            .as_slice()
            .iter()
            .zip(&dir)
            .map(|(c, v)| c + radius * v / norm)
            .collect();
        out.push(ParamVector::new(p)?);
    }
    Ok(out)
}

/// `½β‖φ‖² + Σ_i Huber(κ(θ_i; φ) − y_i)`, the consolidator fitting loss
/// over fixed points `θ_i` (rows) and targets `y_i`, as a function of `φ`.
#[derive(Clone, Debug)]
pub struct ConsolidatorFit {
    spec: ModelSpec,
    points: Arc<Matrix>,
    targets: Arc<Vec<f64>>,
    beta: f64,
    delta: f64,
}

impl ConsolidatorFit {
    pub fn new(spec: ModelSpec, points: Matrix, targets: Vec<f64>, beta: f64, delta: f64) -> Result<Self> {
        if points.cols() != spec.input_dim || points.rows() != targets.len() {
            return Err(Error::Dimension(format!(
                "{}×{} points with {} targets for a consolidator over {} inputs",
                points.rows(),
                points.cols(),
                targets.len(),
                spec.input_dim
            )));
        }
        Ok(Self {
            spec,
            points: Arc::new(points),
            targets: Arc::new(targets),
            beta,
            delta,
        })
    }
}

impl Objective for ConsolidatorFit {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn record<T: Scalar>(&self, g: &mut Graph<T>, phi: Var) -> Result<Var> {
        let x = g.constant_f64(&self.points);
        let out = self.spec.record_forward(g, phi, x)?;
        let fit = g.huber(out, self.targets.clone(), self.delta)?;
        if self.beta == 0.0 {
            return Ok(fit);
        }
        let sq = g.mul(phi, phi)?;
        let sq = g.sum(sq);
        let reg = g.scale(sq, 0.5 * self.beta);
        g.add(fit, reg)
    }
}

/// Fits a consolidator to `target` on fresh ball samples around `center`,
/// one Adam step per sample under the one-cycle schedule.
pub fn fit_consolidator<F>(
    target: F,
    center: &ParamVector,
    radius: f64,
    cfg: &ConsolidatorConfig,
    init: Option<&Consolidator>,
    seed: u64,
) -> Result<Consolidator>
where
    F: Fn(&[ParamVector]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let spec = cfg.spec(center.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = match init {
        Some(c) if c.spec == spec => c.params.as_slice().to_vec(),
        _ => init_params(&spec, rng.random())?.into_vec(),
    };
    let mut adam = Adam::new(phi.len(), AdamConfig::default());
    for step in 0..cfg.fit_steps {
        let points = sample_uniform_ball_with(&mut rng, center, radius, cfg.sample_size)?;
        let values = target(&points)?;
        if values.len() != points.len() {
            return Err(Error::Dimension(format!(
                "{} target values for {} points",
                values.len(),
                points.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "target at sampled point {i} of fit step {step}: {:?}",
                points[i].as_slice()
            )));
        }
        let rows: Vec<Vec<f64>> = points.iter().map(|p| p.as_slice().to_vec()).collect();
        let obj = ConsolidatorFit::new(
            spec.clone(),
            Matrix::from_rows(&rows)?,
            values,
            cfg.beta,
            cfg.huber_delta,
        )?;
        let current = ParamVector::new(phi.clone()).map_err(|e| Error::Diverged {
            step,
            detail: format!("consolidator parameters: {e}"),
        })?;
        let (_, grad) = value_and_grad(&obj, &current).map_err(|e| Error::Diverged {
            step,
            detail: format!("consolidator fit: {e}"),
        })?;
        let lr = one_cycle_lr(step, cfg.fit_steps, cfg.lr)?;
        adam.step(&mut phi, grad.as_slice(), lr);
    }
    Consolidator::new(spec, ParamVector::new(phi)?)
}

/// Path-integral importance for synaptic intelligence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiState {
    /// Consolidated importance Ω.
    pub importance: Vec<f64>,
    /// Running path integral ω for the current task.
    pub path: Vec<f64>,
    /// Parameters at the start of the current task.
    pub theta_old: ParamVector,
}

impl SiState {
    pub fn new(theta_start: ParamVector) -> Self {
        let d = theta_start.len();
        Self {
            importance: vec![0.0; d],
            path: vec![0.0; d],
            theta_old: theta_start,
        }
    }

    /// `ω += −g·Δθ` for one optimizer step.
    pub fn observe(&mut self, grad: &[f64], before: &[f64], after: &[f64]) {
        for (((w, g), b), a) in self.path.iter_mut().zip(grad).zip(before).zip(after) {
            *w -= g * (a - b);
        }
    }

    /// Folds the path integral into Ω and re-anchors at `theta_star`.
    pub fn consolidate(&mut self, theta_star: &ParamVector, xi: f64) {
        for (k, (o, w)) in self.importance.iter_mut().zip(&self.path).enumerate() {
            let delta = theta_star.as_slice()[k] - self.theta_old.as_slice()[k];
            *o += w.max(0.0) / (delta * delta + xi);
        }
        self.path.iter_mut().for_each(|w| *w = 0.0);
        self.theta_old = theta_star.clone();
    }

    /// `λ Σ_k Ω_k (θ_k − θ*_k)²`.
    pub fn penalty(&self, lambda: f64) -> Result<Penalty> {
        let state = PenaltyState {
            anchor: self.theta_old.clone(),
            curvature: Curvature::Diagonal(self.importance.iter().map(|o| 2.0 * o).collect()),
            tasks_consolidated: 1,
        };
        Penalty::quadratic(&state, lambda)
    }
}

/// What a method carries from one task to the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MethodState {
    Finetune,
    Joint,
    Aqc(PenaltyState),
    Ewc(PenaltyState),
    Si(SiState),
    Nc { consolidator: Option<Consolidator> },
}

/// Parameters and method state after some number of tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub method: Method,
    pub state: MethodState,
    pub theta: ParamVector,
    pub tasks_done: usize,
    pub seed: u64,
}

/// The training NLL of one task's data.
pub fn task_nll(problem: &Problem, x: &Matrix, labels: &[usize]) -> Result<Nll> {
    let counts = match problem.likelihood {
        LikelihoodKind::WeightedCategorical => {
            // absent classes get the largest count so they do not set the minimum
            let mut c = vec![0usize; problem.spec.output_dim];
            for &y in labels {
                if y < c.len() {
                    c[y] += 1;
                }
            }
            let max = c.iter().copied().max().unwrap_or(1).max(1);
            Some(c.into_iter().map(|v| if v == 0 { max } else { v }).collect::<Vec<_>>())
        }
        _ => None,
    };
    Nll::classification(
        problem.spec.clone(),
        Arc::new(x.clone()),
        Arc::new(labels.to_vec()),
        problem.likelihood,
        counts.as_deref(),
    )
}

/// Diagonal empirical Fisher: sum over examples of squared per-example NLL gradients.
pub fn empirical_fisher_diagonal(nll: &Nll, theta: &ParamVector) -> Result<Vec<f64>> {
    let grads: Vec<ParamVector> = nll
        .examples()
        .par_iter()
        .map(|e| value_and_grad(e, theta).map(|(_, g)| g))
        .collect::<Result<_>>()?;
    let mut diag = vec![0.0; theta.len()];
    for g in &grads {
        for (d, v) in diag.iter_mut().zip(g.as_slice()) {
            *d += v * v;
        }
    }
    Ok(diag)
}

/// `H(l_t)(θ)` summed over mini-batches of `batch_size`.
pub fn task_hessian(nll: &Nll, theta: &ParamVector, batch_size: usize) -> Result<crate::ad::HessianMatrix> {
    accumulate_hessian_over_batches(&nll.batches(batch_size), theta)
}

impl Learner {
    /// A fresh learner with Lecun-normal initial parameters drawn from `seed`.
    pub fn new(problem: &Problem, method: Method, seed: u64) -> Result<Self> {
        method.validate()?;
        problem.train.validate()?;
        let d = problem.dim();
        let theta = init_params(&problem.spec, mix_seed(seed, INIT_STREAM))?;
        let state = match method {
            Method::Finetune => MethodState::Finetune,
            Method::Joint => MethodState::Joint,
            Method::Aqc { .. } => MethodState::Aqc(PenaltyState::initial_full(d)),
            Method::Ewc { .. } => MethodState::Ewc(PenaltyState::initial_diagonal(d)),
            Method::Si { .. } => MethodState::Si(SiState::new(theta.clone())),
            Method::Nc { .. } => {
                problem.consolidator.validate()?;
                MethodState::Nc { consolidator: None }
            }
        };
        Ok(Self {
            method,
            state,
            theta,
            tasks_done: 0,
            seed,
        })
    }

    /// The regularizer the next task trains against.
    pub fn penalty(&self) -> Result<Penalty> {
        match (&self.state, self.method) {
            (MethodState::Finetune, Method::Finetune) | (MethodState::Joint, Method::Joint) => {
                Ok(Penalty::GaussianPrior)
            }
            (MethodState::Aqc(s), Method::Aqc { lambda })
            | (MethodState::Ewc(s), Method::Ewc { lambda }) => s.penalty(lambda),
            (MethodState::Si(s), Method::Si { lambda, .. }) => {
                if self.tasks_done == 0 {
                    Ok(Penalty::GaussianPrior)
                } else {
                    s.penalty(lambda)
                }
            }
            (MethodState::Nc { consolidator }, Method::Nc { lambda, .. }) => Ok(match consolidator {
                Some(c) => Penalty::neural(c.clone(), lambda),
                None => Penalty::GaussianPrior,
            }),
            (_, m) => Err(Error::Invalid(format!(
                "method state does not belong to method {}",
                m.name()
            ))),
        }
    }

    /// The point where [`Learner::penalty`] vanishes.
    pub fn anchor(&self) -> ParamVector {
        match &self.state {
            MethodState::Aqc(s) | MethodState::Ewc(s) => s.anchor.clone(),
            MethodState::Si(s) if self.tasks_done > 0 => s.theta_old.clone(),
            MethodState::Nc { consolidator: Some(_) } => self.theta.clone(),
            _ => ParamVector::zeros(self.theta.len()),
        }
    }

    fn train_config(&self, problem: &Problem) -> TrainConfig {
        let mut cfg = problem.train.clone();
        cfg.seed = mix_seed(self.seed, TRAIN_STREAM + self.tasks_done as u64);
        cfg
    }

    /// Trains on the next task. `tasks` holds the NLLs of every task seen so
    /// far including the current one (last); only joint training reads the
    /// earlier entries.
    pub fn step(&mut self, problem: &Problem, tasks: &[Nll]) -> Result<&ParamVector> {
        let current = tasks
            .last()
            .ok_or_else(|| Error::Invalid("no task to train on".into()))?;
        if current.dim() != self.theta.len() {
            return Err(Error::Dimension(format!(
                "task model has {} parameters, learner has {}",
                current.dim(),
                self.theta.len()
            )));
        }
        let cfg = self.train_config(problem);
        let penalty = Arc::new(self.penalty()?);
        let method = self.method;
        match (&mut self.state, method) {
            (MethodState::Finetune, _) => {
                let loss = RecursiveLoss::new(penalty, current.clone())?;
                self.theta = train(&loss, &cfg, &self.theta)?;
            }
            (MethodState::Joint, _) => {
                let all = Nll::concat(tasks)?;
                let loss = RecursiveLoss::new(Arc::new(Penalty::GaussianPrior), all)?;
                self.theta = train(&loss, &cfg, &self.theta)?;
            }
            (MethodState::Aqc(state), _) => {
                let loss = RecursiveLoss::new(penalty, current.clone())?;
                let theta = train(&loss, &cfg, &self.theta)?;
                let h = task_hessian(current, &theta, problem.hessian_batch())?;
                match &mut state.curvature {
                    Curvature::Full(acc) => acc.add_assign(&h)?,
                    Curvature::Diagonal(_) => {
                        return Err(Error::Invalid("AQC state carries a diagonal curvature".into()))
                    }
                }
                state.anchor = theta.clone();
                state.tasks_consolidated += 1;
                self.theta = theta;
            }
            (MethodState::Ewc(state), _) => {
                let loss = RecursiveLoss::new(penalty, current.clone())?;
                let theta = train(&loss, &cfg, &self.theta)?;
                let fisher = empirical_fisher_diagonal(current, &theta)?;
                match &mut state.curvature {
                    Curvature::Diagonal(acc) => {
                        acc.iter_mut().zip(&fisher).for_each(|(a, f)| *a += f)
                    }
                    Curvature::Full(_) => {
                        return Err(Error::Invalid("EWC state carries a full curvature".into()))
                    }
                }
                state.anchor = theta.clone();
                state.tasks_consolidated += 1;
                self.theta = theta;
            }
            (MethodState::Si(state), Method::Si { xi, .. }) => {
                let loss = RecursiveLoss::new(penalty, current.clone())?;
                let theta = train_with_hook(&loss, &cfg, &self.theta, |e| {
                    state.observe(e.grad, e.theta_before, e.theta_after)
                })?;
                state.consolidate(&theta, xi);
                self.theta = theta;
            }
            (MethodState::Nc { consolidator }, Method::Nc { radius, .. }) => {
                let loss = RecursiveLoss::new(penalty, current.clone())?;
                let theta = train(&loss, &cfg, &self.theta)?;
                let init = if problem.consolidator.reinit {
                    None
                } else {
                    consolidator.as_ref()
                };
                let fitted = fit_consolidator(
                    |points| loss.values_at(points),
                    &theta,
                    radius,
                    &problem.consolidator,
                    init,
                    mix_seed(self.seed, FIT_STREAM + self.tasks_done as u64),
                )?
                .anchored_at(&theta)?;
                *consolidator = Some(fitted);
                self.theta = theta;
            }
            (_, m) => {
                return Err(Error::Invalid(format!(
                    "method state does not belong to method {}",
                    m.name()
                )))
            }
        }
        self.tasks_done += 1;
        Ok(&self.theta)
    }
}

/// Runs `method` over `tasks` in order, calling `after_task(t, θ*_t)` after each.
pub fn run_sequence(
    problem: &Problem,
    method: Method,
    tasks: &[Nll],
    seed: u64,
    mut after_task: impl FnMut(usize, &Learner) -> Result<()>,
) -> Result<Learner> {
    if tasks.is_empty() {
        return Err(Error::Invalid("empty task sequence".into()));
    }
    let mut learner = Learner::new(problem, method, seed)?;
    for t in 0..tasks.len() {
        learner.step(problem, &tasks[..=t])?;
        after_task(t, &learner)?;
    }
    Ok(learner)
}

/// Fine-tuning: the prior is the only regularizer.
pub fn run_finetune(problem: &Problem, tasks: &[Nll], seed: u64) -> Result<Vec<ParamVector>> {
    collect_thetas(problem, Method::Finetune, tasks, seed)
}

/// Joint MAP training on all data seen so far.
pub fn run_joint(problem: &Problem, tasks: &[Nll], seed: u64) -> Result<Vec<ParamVector>> {
    collect_thetas(problem, Method::Joint, tasks, seed)
}

pub fn collect_thetas(problem: &Problem, method: Method, tasks: &[Nll], seed: u64) -> Result<Vec<ParamVector>> {
    let mut out = Vec::with_capacity(tasks.len());
    run_sequence(problem, method, tasks, seed, |_, l| {
        out.push(l.theta.clone());
        Ok(())
    })?;
    Ok(out)
}
