//! Dense models: softmax/logistic regression, fully connected swish nets and
//! the scalar-output consolidator.
//!
//! Parameters are stored layer by layer as `W` (`fan_in×fan_out`, row-major,
//! applied as `x·W`) followed by the bias `b` (`fan_out`). Hidden layers use
//! swish; the output layer is linear and the losses own the link function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ad::{Graph, Matrix, ParamVector, Scalar, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Swish,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Categorical,
    Bernoulli,
    Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    pub head: Head,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>, output_dim: usize, head: Head) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_sizes,
            output_dim,
            activation: Activation::Swish,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Softmax regression over `classes` outputs.
    pub fn softmax_regression(input_dim: usize, classes: usize) -> Result<Self> {
        Self::new(input_dim, Vec::new(), classes, Head::Categorical)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Invalid(format!("layer widths must be positive: {self:?}")));
        }
        if matches!(self.head, Head::Bernoulli | Head::Scalar) && self.output_dim != 1 {
            return Err(Error::Invalid(format!(
                "{:?} head needs output_dim 1, got {}",
                self.head, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_sizes.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_sizes);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    fn check_params(&self, len: usize) -> Result<()> {
        if len != self.param_count() {
            return Err(Error::Dimension(format!(
                "model has {} parameters, got vector of length {len}",
                self.param_count()
            )));
        }
        Ok(())
    }

    /// Records the forward pass with `params` a node holding the flat parameters
    /// and `x` an `n×input_dim` node; returns `n×output_dim` logits.
    pub fn record_forward<T: Scalar>(&self, g: &mut Graph<T>, params: Var, x: Var) -> Result<Var> {
        self.check_params(g.value(params).as_slice().len())?;
        if g.value(x).cols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "model expects {} input columns, got {}",
                self.input_dim,
                g.value(x).cols()
            )));
        }
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut h = x;
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = g.block(params, offset, fan_in, fan_out)?;
            offset += fan_in * fan_out;
            let b = g.block(params, offset, 1, fan_out)?;
            offset += fan_out;
            let z = g.matmul(h, w)?;
            h = g.add_row(z, b)?;
            if l < last {
                h = match self.activation {
                    Activation::Swish => g.swish(h),
                };
            }
        }
        Ok(h)
    }
}

/// Lecun-normal weights (std `1/√fan_in`) and zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layers() {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt())
            .map_err(|e| Error::Invalid(e.to_string()))?;
        out.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
        out.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector::new(out)
}

/// Logits for every row of `x`.
pub fn forward(spec: &ModelSpec, theta: &ParamVector, x: &Matrix) -> Result<Matrix> {
    let mut g = Graph::<f64>::new();
    let p = g.constant(theta.as_row());
    let xv = g.constant_f64(x);
    let out = spec.record_forward(&mut g, p, xv)?;
    let logits = g.value(out).clone();
    if logits.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(logits)
}

pub fn swish(z: f64) -> f64 {
    z * Scalar::sigmoid(z)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let (n, k) = logits.shape();
    let mut out = Vec::with_capacity(n * k);
    for row in logits.row_iter() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut s = 0.0;
        for &z in row {
            let e = (z - m).exp();
            s += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= s;
        }
    }
    Tensor::from_vec(n, k, out).expect("softmax shape")
}

/// Class probabilities: softmax rows for a categorical head, `σ(z)` (one
/// column, the probability of class 1) for a Bernoulli head.
pub fn predict_proba(spec: &ModelSpec, theta: &ParamVector, x: &Matrix) -> Result<Matrix> {
    let logits = forward(spec, theta, x)?;
    match spec.head {
        Head::Categorical => Ok(softmax_rows(&logits)),
        Head::Bernoulli => Ok(logits.map(Scalar::sigmoid)),
        Head::Scalar => Err(Error::Invalid(
            "a scalar-head model has no class probabilities".into(),
        )),
    }
}

/// Argmax with ties toward the lowest index; for one Bernoulli column,
/// class 1 when `p ≥ 0.5`.
pub fn classes_from_proba(head: Head, probs: &Matrix) -> Vec<usize> {
    match head {
        Head::Bernoulli => probs
            .as_slice()
            .iter()
            .map(|&p| usize::from(p >= 0.5))
            .collect(),
        _ => probs
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect(),
    }
}

pub fn predict_class(spec: &ModelSpec, theta: &ParamVector, x: &Matrix) -> Result<Vec<usize>> {
    let probs = predict_proba(spec, theta, x)?;
    Ok(classes_from_proba(spec.head, &probs))
}
