//! Scalar types the tape can run over.
//!
//! The reverse pass is written once against [`Scalar`]. Running it with
//! `f64` gives gradients; running it with [`Dual`] (value plus one tangent)
//! differentiates the whole forward-and-backward computation along one
//! direction, which yields one column of the Hessian.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Send
    + Sync
    + fmt::Debug
    + PartialEq
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;

    /// Primal value, used for branch decisions (max-shift, Huber regime, sign).
    fn value(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn is_finite(self) -> bool;

    fn scale(self, c: f64) -> Self;

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::from_f64(1.0)
    }

    /// Logistic sigmoid, evaluated without overflow for either sign.
    #[inline]
    fn sigmoid(self) -> Self {
        if self.value() >= 0.0 {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `ln(1 + e^x)` in the stable split form.
    #[inline]
    fn softplus(self) -> Self {
        if self.value() >= 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// `C = A·B` (or `C += A·B` when `accumulate`), strided row/column access.
    ///
    /// A is `m×k`, B is `k×n`, C is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        c: &mut [Self],
        (rsc, csc): (usize, usize),
        accumulate: bool,
    ) {
        for i in 0..m {
            for j in 0..n {
                let dst = &mut c[i * rsc + j * csc];
                if !accumulate {
                    *dst = Self::zero();
                }
            }
            for p in 0..k {
                let aip = a[i * rsa + p * csa];
                for j in 0..n {
                    c[i * rsc + j * csc] += aip * b[p * rsb + j * csb];
                }
            }
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        (rsa, csa): (usize, usize),
        b: &[f64],
        (rsb, csb): (usize, usize),
        c: &mut [f64],
        (rsc, csc): (usize, usize),
        accumulate: bool,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        let last = |rows: usize, cols: usize, rs: usize, cs: usize| {
            (rows.max(1) - 1) * rs + (cols.max(1) - 1) * cs
        };
        assert!(k == 0 || last(m, k, rsa, csa) < a.len());
        assert!(k == 0 || last(k, n, rsb, csb) < b.len());
        assert!(last(m, n, rsc, csc) < c.len());
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: every index touched by dgemm is bounded by the asserts above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c.as_mut_ptr(),
                rsc as isize,
                csc as isize,
            );
        }
    }
}

/// Forward-mode dual number carrying a single tangent.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Dual) {
        *self = *self + o;
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, o: Dual) {
        *self = *self - o;
    }
}

impl MulAssign for Dual {
    #[inline]
    fn mul_assign(&mut self, o: Dual) {
        *self = *self * o;
    }
}

impl Scalar for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        Dual::new(self.re.ln_1p(), self.eps / (1.0 + self.re))
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Dual::new(self.re * c, self.eps * c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_chain_rule() {
        // d/dx [ln(1 + e^{2x})] at x = 0.3
        let x = Dual::new(0.3, 1.0);
        let y = (x + x).exp().ln_1p();
        let e = (0.6f64).exp();
        assert!((y.re - e.ln_1p()).abs() < 1e-15);
        assert!((y.eps - 2.0 * e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(Scalar::sigmoid(800.0f64), 1.0);
        assert_eq!(Scalar::sigmoid(-800.0f64), 0.0);
        assert!((Scalar::sigmoid(0.0f64) - 0.5).abs() < 1e-16);
        assert!((Scalar::softplus(-800.0f64)).abs() < 1e-300);
        assert_eq!(Scalar::softplus(800.0f64), 800.0);
    }

    #[test]
    fn f64_gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        let mut fast = vec![0.0; 8];
        let mut slow = vec![Dual::default(); 8];
        f64::gemm(2, 3, 4, &a, (3, 1), &b, (4, 1), &mut fast, (4, 1), false);
        let ad: Vec<Dual> = a.iter().map(|&v| Dual::from_f64(v)).collect();
        let bd: Vec<Dual> = b.iter().map(|&v| Dual::from_f64(v)).collect();
        Dual::gemm(2, 3, 4, &ad, (3, 1), &bd, (4, 1), &mut slow, (4, 1), false);
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s.re).abs() < 1e-14);
        }
    }
}
