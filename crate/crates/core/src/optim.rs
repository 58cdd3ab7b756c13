//! Mini-batch Adam under a one-cycle learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{value_and_grad, ParamVector};
use crate::error::{Error, Result};
use crate::objectives::RecursiveLoss;

/// Fraction of steps spent warming up.
pub const WARMUP_FRACTION: f64 = 0.3;
/// Warmup starts at `base_lr / WARMUP_DIVISOR`.
pub const WARMUP_DIVISOR: f64 = 10.0;
/// Cosine decay ends at `base_lr / FINAL_DIVISOR`.
pub const FINAL_DIVISOR: f64 = 1000.0;

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) || self.eps <= 0.0 {
            return Err(Error::Invalid(format!("Adam settings out of range: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, base_lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            base_lr,
            seed,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Invalid(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        self.adam.validate()
    }
}

/// Learning rate at `step` of `total_steps`: linear warmup from `base/10` to
/// `base` over the first 30% of steps, then cosine decay to `base/1000` at
/// the final step.
pub fn one_cycle_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Invalid("one-cycle schedule over zero steps".into()));
    }
    if step >= total_steps {
        return Err(Error::Invalid(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    let start = base_lr / WARMUP_DIVISOR;
    let end = base_lr / FINAL_DIVISOR;
    let peak = WARMUP_FRACTION * total_steps as f64;
    let s = step as f64;
    if s <= peak {
        if peak <= 0.0 {
            return Ok(base_lr);
        }
        return Ok(start + (base_lr - start) * s / peak);
    }
    let span = (total_steps - 1) as f64 - peak;
    let progress = if span > 0.0 { ((s - peak) / span).min(1.0) } else { 1.0 };
    Ok(end + (base_lr - end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(theta.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, &g), m), v) in theta
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// What a training step did, for observers such as path-integral importance.
pub struct StepEvent<'a> {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub theta_before: &'a [f64],
    pub grad: &'a [f64],
    pub theta_after: &'a [f64],
}

pub fn minibatch_count(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

/// Trains `loss` from `theta0`; see [`train_with_hook`].
pub fn train(loss: &RecursiveLoss, cfg: &TrainConfig, theta0: &ParamVector) -> Result<ParamVector> {
    train_with_hook(loss, cfg, theta0, |_| {})
}

/// Runs `cfg.epochs` passes over a fresh seeded permutation of the data per
/// epoch. Each step minimizes the batch likelihood plus the penalty divided
/// by the number of mini-batches.
pub fn train_with_hook(
    loss: &RecursiveLoss,
    cfg: &TrainConfig,
    theta0: &ParamVector,
    mut hook: impl FnMut(&StepEvent<'_>),
) -> Result<ParamVector> {
    cfg.validate()?;
    let n = loss.nll().len();
    if theta0.len() != loss.nll().spec().param_count() {
        return Err(Error::Dimension(format!(
            "model has {} parameters, start vector has {}",
            loss.nll().spec().param_count(),
            theta0.len()
        )));
    }
    if cfg.epochs == 0 {
        return Ok(theta0.clone());
    }
    if n == 0 {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let per_epoch = minibatch_count(n, cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(theta0.len(), cfg.adam);
    let mut theta = theta0.as_slice().to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.batch_size) {
            let batch = loss.minibatch(rows, per_epoch);
            let current = ParamVector::new(theta.clone()).map_err(|e| Error::Diverged {
                step,
                detail: e.to_string(),
            })?;
            let (value, grad) = value_and_grad(&batch, &current).map_err(|e| Error::Diverged {
                step,
                detail: e.to_string(),
            })?;
            let lr = one_cycle_lr(step, total, cfg.base_lr)?;
            adam.step(&mut theta, grad.as_slice(), lr);
            hook(&StepEvent {
                step,
                lr,
                loss: value,
                theta_before: current.as_slice(),
                grad: grad.as_slice(),
                theta_after: &theta,
            });
            step += 1;
        }
    }
    ParamVector::new(theta).map_err(|e| Error::Diverged {
        step,
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let base = 0.1;
        assert!((one_cycle_lr(0, 1000, base).unwrap() - 0.01).abs() < 1e-15);
        assert!((one_cycle_lr(300, 1000, base).unwrap() - base).abs() < 1e-15);
        let last = one_cycle_lr(999, 1000, base).unwrap();
        assert!((last - base / 1000.0).abs() / (base / 1000.0) < 0.01);
        assert!(one_cycle_lr(0, 0, base).is_err());
        assert!(one_cycle_lr(5, 5, base).is_err());
        // a one-step schedule stays finite
        assert!(one_cycle_lr(0, 1, base).unwrap().is_finite());
    }

    #[test]
    fn schedule_rises_then_falls() {
        let lrs: Vec<f64> = (0..200).map(|s| one_cycle_lr(s, 200, 1.0).unwrap()).collect();
        assert!(lrs[..=60].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[60..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn first_adam_step_has_unit_size() {
        for g in [1e-6, 0.3, 250.0, -4.0] {
            let mut adam = Adam::new(1, AdamConfig::default());
            let mut theta = [1.0];
            adam.step(&mut theta, &[g], 0.05);
            let moved = (1.0 - theta[0]).abs();
            assert!((moved - 0.05).abs() < 0.05 * 1e-2, "g {g}: moved {moved}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut theta = [1.0, -1.0];
        adam.step(&mut theta, &[0.5, -0.5], 0.1);
        let after_first = theta;
        let (m0, v0) = (adam.first_moment()[0], adam.second_moment()[0]);
        adam.m = vec![m0, -m0];
        adam.step(&mut theta, &[0.0, 0.0], 0.0);
        assert_eq!(theta, after_first);
        assert!((adam.first_moment()[0] - 0.9 * m0).abs() < 1e-15);
        assert!((adam.second_moment()[0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn scalar_quadratic_converges() {
        // f(θ) = θ², one-cycle lr 0.1 over 100 steps from θ₀ = 1
        let mut adam = Adam::new(1, AdamConfig::default());
        let mut theta = [1.0];
        let mut trace = Vec::new();
        for s in 0..100 {
            let g = 2.0 * theta[0];
            adam.step(&mut theta, &[g], one_cycle_lr(s, 100, 0.1).unwrap());
            trace.push(theta[0].abs());
        }
        assert!(trace[..10].windows(2).all(|w| w[1] < w[0]));
        assert!(trace[99] < 0.02, "final |θ| {}", trace[99]);
    }
}
