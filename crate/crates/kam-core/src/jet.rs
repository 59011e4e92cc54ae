//! Truncated power series in one formal parameter.
//!
//! Used as the scalar type of the map formulas when expanding in ε: pushing
//! jets through the closed-form expressions yields the exact Taylor
//! coefficients of compositions like f_{μ(ε),ε}∘K(ε), with no numerical
//! differentiation. Arithmetic silently drops orders above the longest
//! operand, so the truncation order is carried by the ε variable itself and
//! plain constants stay cheap.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::models::RingElem;

/// c\[0\] + c\[1\]ε + … + c\[n\]ε^n.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Jet {
    pub c: Vec<Complex64>,
}

impl Jet {
    pub fn constant(v: Complex64) -> Self {
        Self { c: vec![v] }
    }

    /// The formal variable ε, truncated at `order`.
    pub fn variable(order: usize) -> Self {
        assert!(order >= 1);
        let mut c = vec![Complex64::default(); order + 1];
        c[1] = Complex64::new(1.0, 0.0);
        Self { c }
    }

    pub fn from_coeffs(c: Vec<Complex64>) -> Self {
        assert!(!c.is_empty());
        Self { c }
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn coeff(&self, j: usize) -> Complex64 {
        self.c.get(j).copied().unwrap_or_default()
    }

    fn zip(&self, o: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        let n = self.c.len().max(o.c.len());
        let c = (0..n).map(|j| f(self.coeff(j), o.coeff(j))).collect();
        Self { c }
    }

    /// g(self) for analytic g, given (k, a) ↦ g^{(k)}(a): writes
    /// self = a + n with n nilpotent and sums the Taylor series of g at a,
    /// which terminates at the truncation order.
    fn analytic(&self, derivs: impl Fn(usize, Complex64) -> Complex64) -> Self {
        let a = self.c[0];
        let order = self.order();
        let mut nilpotent = self.clone();
        nilpotent.c[0] = Complex64::default();
        let mut out = Self {
            c: vec![Complex64::default(); order + 1],
        };
        let mut power = Self::constant(Complex64::new(1.0, 0.0));
        let mut factorial = 1.0;
        for k in 0..=order {
            if k > 0 {
                power = power.mul(&nilpotent);
                factorial *= k as f64;
            }
            let g = derivs(k, a) / factorial;
            for j in 0..=order {
                out.c[j] += g * power.coeff(j);
            }
        }
        out
    }
}

impl RingElem for Jet {
    fn from_f64(v: f64) -> Self {
        Self::constant(Complex64::new(v, 0.0))
    }

    fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a + b)
    }

    fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a - b)
    }

    fn mul(&self, o: &Self) -> Self {
        let n = self.c.len().max(o.c.len());
        let mut c = vec![Complex64::default(); n];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in o.c.iter().enumerate() {
                if i + j < n {
                    c[i + j] += a * b;
                }
            }
        }
        Self { c }
    }

    fn scale(&self, v: f64) -> Self {
        Self {
            c: self.c.iter().map(|z| z * v).collect(),
        }
    }

    fn sin2pi(&self) -> Self {
        // d^k/dt^k sin(2πt) = (2π)^k sin(2πt + kπ/2).
        self.analytic(|k, a| {
            let tau = 2.0 * PI;
            tau.powi(k as i32) * (a * tau + Complex64::new(k as f64 * PI / 2.0, 0.0)).sin()
        })
    }

    fn cos2pi(&self) -> Self {
        self.analytic(|k, a| {
            let tau = 2.0 * PI;
            tau.powi(k as i32) * (a * tau + Complex64::new(k as f64 * PI / 2.0, 0.0)).cos()
        })
    }
}
