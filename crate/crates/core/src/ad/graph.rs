//! Tensor-level reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list visits every node after all of its consumers. The backward rules are
//! written against [`Scalar`], so the same tape differentiated with
//! [`super::Dual`] entries produces directional derivatives of the gradient.

use std::sync::Arc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Const,
    /// Contiguous slice of `src`'s storage reinterpreted as `rows×cols`.
    Block {
        src: Var,
        offset: usize,
    },
    MatMul(Var, Var),
    /// Adds a `1×n` row to every row of an `m×n` tensor.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Swish(Var),
    Sum(Var),
    /// `xᵀ H x` for a length-d `x` and a constant row-major `H`.
    QuadForm {
        x: Var,
        h: Arc<Vec<f64>>,
    },
    /// `Σ wᵢ xᵢ²`.
    DiagQuadForm {
        x: Var,
        w: Arc<Vec<f64>>,
    },
    /// `Σᵣ wᵣ (logsumexp(zᵣ) − zᵣ[yᵣ])`.
    SoftmaxXent {
        logits: Var,
        labels: Arc<Vec<usize>>,
        weights: Option<Arc<Vec<f64>>>,
    },
    /// `Σᵣ softplus(zᵣ) − yᵣ zᵣ` for a single logit column.
    LogisticXent {
        logits: Var,
        labels: Arc<Vec<usize>>,
    },
    /// `Σᵣ huber(pᵣ − tᵣ; δ)`.
    Huber {
        pred: Var,
        target: Arc<Vec<f64>>,
        delta: f64,
    },
    /// `½ Σᵣ (pᵣ − tᵣ)²`.
    SquaredError {
        pred: Var,
        target: Arc<Vec<f64>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Const => "constant",
            Op::Block { .. } => "block",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "bias add",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Swish(..) => "swish",
            Op::Sum(..) => "sum",
            Op::QuadForm { .. } => "quadratic form",
            Op::DiagQuadForm { .. } => "diagonal quadratic form",
            Op::SoftmaxXent { .. } => "softmax cross entropy",
            Op::LogisticXent { .. } => "logistic cross entropy",
            Op::Huber { .. } => "huber",
            Op::SquaredError { .. } => "squared error",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of `v`; `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn huber_value<T: Scalar>(r: T, delta: f64) -> T {
    let a = r.value().abs();
    if a <= delta {
        (r * r).scale(0.5)
    } else {
        let abs = if r.value() >= 0.0 { r } else { -r };
        (abs - T::from_f64(0.5 * delta)).scale(delta)
    }
}

fn huber_slope<T: Scalar>(r: T, delta: f64) -> T {
    if r.value().abs() <= delta {
        r
    } else if r.value() > 0.0 {
        T::from_f64(delta)
    } else {
        T::from_f64(-delta)
    }
}

/// `(max_j z_j, Σ_j exp(z_j − max))` for one logit row.
fn shifted_exp_sum<T: Scalar>(row: &[T]) -> (T, T) {
    let mut m = row[0];
    for &z in &row[1..] {
        if z.value() > m.value() {
            m = z;
        }
    }
    let mut s = T::zero();
    for &z in row {
        s += (z - m).exp();
    }
    (m, s)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn constant_f64(&mut self, value: &Tensor<f64>) -> Var {
        self.constant(value.map(T::from_f64))
    }

    pub fn block(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Result<Var> {
        let s = self.value(src).as_slice();
        if offset + rows * cols > s.len() {
            return Err(Error::Dimension(format!(
                "block {rows}x{cols} at offset {offset} exceeds source length {}",
                s.len()
            )));
        }
        let data = s[offset..offset + rows * cols].to_vec();
        let needs = self.needs(src);
        Ok(self.push(
            Tensor::from_vec(rows, cols, data)?,
            Op::Block { src, offset },
            needs,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).shape();
        let (k2, n) = self.value(b).shape();
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul of {m}x{k} by {k2}x{n}"
            )));
        }
        let mut out = Tensor::zeros(m, n);
        T::gemm(
            m,
            k,
            n,
            self.value(a).as_slice(),
            (k, 1),
            self.value(b).as_slice(),
            (n, 1),
            out.as_mut_slice(),
            (n, 1),
            false,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).shape();
        if self.value(bias).shape() != (1, n) {
            return Err(Error::Dimension(format!(
                "bias of shape {:?} added to {m}x{n}",
                self.value(bias).shape()
            )));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).as_slice();
        for row in out.as_mut_slice().chunks_exact_mut(n.max(1)) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddRow(a, bias), needs))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (r, c) = self.value(a).shape();
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(r, c, data)?, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v.scale(c));
        let needs = self.needs(a);
        self.push(out, Op::Scale(a, c), needs)
    }

    pub fn swish(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|z| z * z.sigmoid());
        let needs = self.needs(a);
        self.push(out, Op::Swish(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = T::zero();
        for &v in self.value(a).as_slice() {
            s += v;
        }
        let needs = self.needs(a);
        self.push(Tensor::filled(1, 1, s), Op::Sum(a), needs)
    }

    pub fn quad_form(&mut self, x: Var, h: Arc<Vec<f64>>) -> Result<Var> {
        let xs = self.value(x).as_slice();
        let d = xs.len();
        if h.len() != d * d {
            return Err(Error::Dimension(format!(
                "quadratic form with {} matrix entries for vector of length {d}",
                h.len()
            )));
        }
        let mut s = T::zero();
        for (i, &xi) in xs.iter().enumerate() {
            let mut hx = T::zero();
            for (&hij, &xj) in h[i * d..(i + 1) * d].iter().zip(xs) {
                hx += xj.scale(hij);
            }
            s += xi * hx;
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::filled(1, 1, s), Op::QuadForm { x, h }, needs))
    }

    pub fn diag_quad_form(&mut self, x: Var, w: Arc<Vec<f64>>) -> Result<Var> {
        let xs = self.value(x).as_slice();
        if w.len() != xs.len() {
            return Err(Error::Dimension(format!(
                "diagonal of length {} for vector of length {}",
                w.len(),
                xs.len()
            )));
        }
        let mut s = T::zero();
        for (&xi, &wi) in xs.iter().zip(w.iter()) {
            s += (xi * xi).scale(wi);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::filled(1, 1, s), Op::DiagQuadForm { x, w }, needs))
    }

    pub fn softmax_xent(
        &mut self,
        logits: Var,
        labels: Arc<Vec<usize>>,
        weights: Option<Arc<Vec<f64>>>,
    ) -> Result<Var> {
        let z = self.value(logits);
        let (n, k) = z.shape();
        if labels.len() != n || weights.as_ref().is_some_and(|w| w.len() != n) {
            return Err(Error::Dimension(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if k == 0 {
            return Err(Error::Dimension("softmax over zero classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Invalid(format!("label {bad} outside [0, {k})")));
        }
        let mut s = T::zero();
        for (r, row) in z.row_iter().enumerate() {
            let (m, e) = shifted_exp_sum(row);
            let mut term = m + e.ln() - row[labels[r]];
            if let Some(w) = &weights {
                term = term.scale(w[r]);
            }
            s += term;
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::filled(1, 1, s),
            Op::SoftmaxXent {
                logits,
                labels,
                weights,
            },
            needs,
        ))
    }

    pub fn logistic_xent(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "logistic loss needs a single logit column per label, got {:?} for {} labels",
                z.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Invalid(format!("binary label {bad} outside {{0, 1}}")));
        }
        let mut s = T::zero();
        for (&zi, &y) in z.as_slice().iter().zip(labels.iter()) {
            s += zi.softplus();
            if y == 1 {
                s -= zi;
            }
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::filled(1, 1, s),
            Op::LogisticXent { logits, labels },
            needs,
        ))
    }

    pub fn huber(&mut self, pred: Var, target: Arc<Vec<f64>>, delta: f64) -> Result<Var> {
        let p = self.value(pred).as_slice();
        if p.len() != target.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} targets",
                p.len(),
                target.len()
            )));
        }
        let mut s = T::zero();
        for (&pi, &ti) in p.iter().zip(target.iter()) {
            s += huber_value(pi - T::from_f64(ti), delta);
        }
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::filled(1, 1, s),
            Op::Huber {
                pred,
                target,
                delta,
            },
            needs,
        ))
    }

    pub fn squared_error(&mut self, pred: Var, target: Arc<Vec<f64>>) -> Result<Var> {
        let p = self.value(pred).as_slice();
        if p.len() != target.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} targets",
                p.len(),
                target.len()
            )));
        }
        let mut s = T::zero();
        for (&pi, &ti) in p.iter().zip(target.iter()) {
            let r = pi - T::from_f64(ti);
            s += r * r;
        }
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::filled(1, 1, s.scale(0.5)),
            Op::SquaredError { pred, target },
            needs,
        ))
    }

    /// Name of the earliest operation whose output holds a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.nodes
            .iter()
            .find(|n| n.value.as_slice().iter().any(|v| !v.is_finite()))
            .map(|n| n.op.name())
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if self.value(out).shape() != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got {:?}",
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::filled(1, 1, T::one()));

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Input | Op::Const) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut Tensor<T> {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Input | Op::Const => {}
            Op::Block { src, offset } => {
                if self.needs(*src) {
                    let dst = self.acc(grads, *src).as_mut_slice();
                    for (d, &gv) in dst[*offset..].iter_mut().zip(g.as_slice()) {
                        *d += gv;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).shape();
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let bv = self.value(*b).as_slice();
                    let da = self.acc(grads, *a).as_mut_slice();
                    T::gemm(m, n, k, g.as_slice(), (n, 1), bv, (1, n), da, (k, 1), true);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let av = self.value(*a).as_slice();
                    let db = self.acc(grads, *b).as_mut_slice();
                    T::gemm(k, m, n, av, (1, k), g.as_slice(), (n, 1), db, (n, 1), true);
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*a) {
                    let da = self.acc(grads, *a).as_mut_slice();
                    for (d, &gv) in da.iter_mut().zip(g.as_slice()) {
                        *d += gv;
                    }
                }
                if self.needs(*bias) {
                    let n = g.cols();
                    let db = self.acc(grads, *bias).as_mut_slice();
                    for row in g.row_iter() {
                        for j in 0..n {
                            db[j] += row[j];
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    let da = self.acc(grads, *a).as_mut_slice();
                    for (d, &gv) in da.iter_mut().zip(g.as_slice()) {
                        *d += gv;
                    }
                }
                if self.needs(*b) {
                    let db = self.acc(grads, *b).as_mut_slice();
                    for (d, &gv) in db.iter_mut().zip(g.as_slice()) {
                        *d += gv.scale(sign);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.needs(this) {
                        let ov = self.value(other).as_slice();
                        let dt = self.acc(grads, this).as_mut_slice();
                        for ((d, &gv), &o) in dt.iter_mut().zip(g.as_slice()).zip(ov) {
                            *d += gv * o;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                let da = self.acc(grads, *a).as_mut_slice();
                for (d, &gv) in da.iter_mut().zip(g.as_slice()) {
                    *d += gv.scale(*c);
                }
            }
            Op::Swish(a) => {
                let zv = self.value(*a).as_slice();
                let da = self.acc(grads, *a).as_mut_slice();
                for ((d, &gv), &z) in da.iter_mut().zip(g.as_slice()).zip(zv) {
                    let s = z.sigmoid();
                    // d/dz z·σ(z) = σ(z)·(1 + z·(1 − σ(z)))
                    *d += gv * s * (T::one() + z * (T::one() - s));
                }
            }
            Op::Sum(a) => {
                let gv = g.scalar();
                let da = self.acc(grads, *a).as_mut_slice();
                for d in da.iter_mut() {
                    *d += gv;
                }
            }
            Op::QuadForm { x, h } => {
                let gv = g.scalar();
                let xs = self.value(*x).as_slice();
                let d = xs.len();
                let dx = self.acc(grads, *x).as_mut_slice();
                for i in 0..d {
                    // (H + Hᵀ) x, row i
                    let mut s = T::zero();
                    for j in 0..d {
                        s += xs[j].scale(h[i * d + j] + h[j * d + i]);
                    }
                    dx[i] += gv * s;
                }
            }
            Op::DiagQuadForm { x, w } => {
                let gv = g.scalar();
                let xs = self.value(*x).as_slice();
                let dx = self.acc(grads, *x).as_mut_slice();
                for ((d, &xi), &wi) in dx.iter_mut().zip(xs).zip(w.iter()) {
                    *d += gv * xi.scale(2.0 * wi);
                }
            }
            Op::SoftmaxXent {
                logits,
                labels,
                weights,
            } => {
                let gv = g.scalar();
                let z = self.value(*logits);
                let k = z.cols();
                let mut rows_grad: Vec<T> = Vec::with_capacity(z.as_slice().len());
                for (r, row) in z.row_iter().enumerate() {
                    let (m, e) = shifted_exp_sum(row);
                    let w = weights.as_ref().map_or(1.0, |w| w[r]);
                    let coef = gv.scale(w);
                    for (j, &zj) in row.iter().enumerate() {
                        let mut p = (zj - m).exp() / e;
                        if j == labels[r] {
                            p -= T::one();
                        }
                        rows_grad.push(coef * p);
                    }
                }
                debug_assert_eq!(rows_grad.len(), z.rows() * k);
                let dz = self.acc(grads, *logits).as_mut_slice();
                for (d, v) in dz.iter_mut().zip(rows_grad) {
                    *d += v;
                }
            }
            Op::LogisticXent { logits, labels } => {
                let gv = g.scalar();
                let zs = self.value(*logits).as_slice().to_vec();
                let dz = self.acc(grads, *logits).as_mut_slice();
                for ((d, z), &y) in dz.iter_mut().zip(zs).zip(labels.iter()) {
                    *d += gv * (z.sigmoid() - T::from_f64(y as f64));
                }
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let gv = g.scalar();
                let ps = self.value(*pred).as_slice().to_vec();
                let dp = self.acc(grads, *pred).as_mut_slice();
                for ((d, p), &t) in dp.iter_mut().zip(ps).zip(target.iter()) {
                    *d += gv * huber_slope(p - T::from_f64(t), *delta);
                }
            }
            Op::SquaredError { pred, target } => {
                let gv = g.scalar();
                let ps = self.value(*pred).as_slice().to_vec();
                let dp = self.acc(grads, *pred).as_mut_slice();
                for ((d, p), &t) in dp.iter_mut().zip(ps).zip(target.iter()) {
                    *d += gv * (p - T::from_f64(t));
                }
            }
        }
    }
}

/// Huber loss of a residual.
pub fn huber_loss(r: f64, delta: f64) -> f64 {
    huber_value(r, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Dual;

    fn vecf(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_gradients_match_hand_derivation() {
        // f(A, B) = sum(A·B); dA = 1·Bᵀ, dB = Aᵀ·1
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = g.input(Tensor::from_vec(3, 2, vec![0.5, -1., 2., 0., 1., 3.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        let da = grads.get(a).unwrap();
        // row sums of B
        assert_eq!(da.as_slice(), &[-0.5, 2.0, 4.0, -0.5, 2.0, 4.0]);
        let db = grads.get(b).unwrap();
        // column sums of A, repeated
        assert_eq!(db.as_slice(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vecf(&[1.0, 2.0]));
        let c = g.constant(vecf(&[3.0, 4.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn block_scatters_back_into_source() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vecf(&[1.0, 2.0, 3.0, 4.0, 5.0]));
        let b = g.block(x, 1, 2, 1).unwrap();
        let sq = g.mul(b, b).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().as_slice(), &[0.0, 4.0, 6.0, 0.0, 0.0]);
        assert!(g.block(x, 4, 2, 1).is_err());
    }

    #[test]
    fn dual_tape_yields_hessian_vector_product() {
        // f(x) = Σ x_i² x_{i+1}; check ∇f and (∇²f)e₀ at (1, 2, 3)
        let x0 = [1.0, 2.0, 3.0];
        let mut g = Graph::<Dual>::new();
        let x = g.input(
            Tensor::from_vec(
                1,
                3,
                x0.iter()
                    .enumerate()
                    .map(|(i, &v)| Dual::new(v, if i == 0 { 1.0 } else { 0.0 }))
                    .collect(),
            )
            .unwrap(),
        );
        let head = g.block(x, 0, 1, 2).unwrap();
        let tail = g.block(x, 1, 1, 2).unwrap();
        let sq = g.mul(head, head).unwrap();
        let prod = g.mul(sq, tail).unwrap();
        let f = g.sum(prod);
        let grads = g.backward(f).unwrap();
        let gx = grads.get(x).unwrap().as_slice();
        // ∂f/∂x0 = 2x0x1 = 4, ∂f/∂x1 = x0² + 2x1x2 = 13, ∂f/∂x2 = x1² = 4
        assert_eq!(gx.iter().map(|d| d.re).collect::<Vec<_>>(), vec![4.0, 13.0, 4.0]);
        // column 0 of the Hessian: (2x1, 2x0, 0)
        assert_eq!(gx.iter().map(|d| d.eps).collect::<Vec<_>>(), vec![4.0, 2.0, 0.0]);
    }

    #[test]
    fn scalar_output_required_for_backward() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vecf(&[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn first_non_finite_names_the_op() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vecf(&[1.0, 800.0]));
        let s = g.swish(x);
        let big = g.scale(s, 1e308);
        let _ = g.sum(big);
        assert_eq!(g.first_non_finite(), Some("scale"));
    }
}
