//! Polynomial nonlinearities `g(u, v) = Σ g_{lm} u^l v^m`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorTerm {
    pub l: usize,
    pub m: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl TaylorTerm {
    pub fn coeff(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub terms: Vec<TaylorTerm>,
}

impl Nonlinearity {
    pub fn zero() -> Self {
        Nonlinearity { terms: vec![] }
    }

    pub fn new(terms: Vec<TaylorTerm>) -> Result<Self> {
        let g = Nonlinearity { terms };
        g.validate()?;
        Ok(g)
    }

    /// `u²v + uv²`.
    pub fn cubic() -> Self {
        Nonlinearity {
            terms: vec![
                TaylorTerm { l: 2, m: 1, re: 1.0, im: 0.0 },
                TaylorTerm { l: 1, m: 2, re: 1.0, im: 0.0 },
            ],
        }
    }

    /// `λ (uv)²`.
    pub fn quartic(lambda: f64) -> Self {
        Nonlinearity {
            terms: vec![TaylorTerm { l: 2, m: 2, re: lambda, im: 0.0 }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.re == 0.0 && t.im == 0.0)
    }

    /// Coefficient `g_{lm}`, summing duplicates.
    pub fn coefficient(&self, l: usize, m: usize) -> Complex64 {
        self.terms
            .iter()
            .filter(|t| t.l == l && t.m == m)
            .map(|t| t.coeff())
            .sum()
    }

    /// Distinct `(l, m)` pairs with nonzero coefficient, sorted.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> = self
            .terms
            .iter()
            .map(|t| (t.l, t.m))
            .filter(|&(l, m)| self.coefficient(l, m) != Complex64::new(0.0, 0.0))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.support().iter().map(|(l, m)| l + m).collect();
        d.dedup();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().last().copied().unwrap_or(0)
    }

    /// Every term has `l = m`, so `g` depends on `|ψ|²` only.
    pub fn is_gauge_invariant(&self) -> bool {
        self.support().iter().all(|(l, m)| l == m)
    }

    /// Reality `g_{ml} = conj g_{lm}` and degree ≥ 3.
    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            if t.l + t.m < 3 {
                return Err(Error::InvalidArgument(format!(
                    "nonlinearity term u^{}v^{} has degree < 3",
                    t.l, t.m
                )));
            }
            if !(t.re.is_finite() && t.im.is_finite()) {
                return Err(Error::InvalidArgument("non-finite Taylor coefficient".into()));
            }
        }
        for (l, m) in self.support() {
            let a = self.coefficient(l, m);
            let b = self.coefficient(m, l);
            if (a.conj() - b).norm() > 1e-14 * a.norm().max(b.norm()) {
                return Err(Error::NonRealNonlinearity { l, m });
            }
        }
        Ok(())
    }

    /// `g` restricted to total degree `d`.
    pub fn homogeneous(&self, d: usize) -> Nonlinearity {
        Nonlinearity {
            terms: self.terms.iter().filter(|t| t.l + t.m == d).copied().collect(),
        }
    }

    /// `g(u, v)`.
    pub fn eval(&self, u: Complex64, v: Complex64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.coeff() * u.powu(t.l as u32) * v.powu(t.m as u32))
            .sum()
    }

    /// `∂g/∂v (u, v)`.
    pub fn d_v(&self, u: Complex64, v: Complex64) -> Complex64 {
        self.terms
            .iter()
            .filter(|t| t.m > 0)
            .map(|t| t.coeff() * (t.m as f64) * u.powu(t.l as u32) * v.powu(t.m as u32 - 1))
            .sum()
    }

    /// `∂g/∂u (u, v)`.
    pub fn d_u(&self, u: Complex64, v: Complex64) -> Complex64 {
        self.terms
            .iter()
            .filter(|t| t.l > 0)
            .map(|t| t.coeff() * (t.l as f64) * u.powu(t.l as u32 - 1) * v.powu(t.m as u32))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Nonlinearity::cubic().validate().is_ok());
        assert!(Nonlinearity::quartic(1.0).validate().is_ok());
        let bad = Nonlinearity {
            terms: vec![TaylorTerm { l: 2, m: 1, re: 1.0, im: 0.0 }],
        };
        assert!(matches!(bad.validate(), Err(Error::NonRealNonlinearity { .. })));
        let low = Nonlinearity {
            terms: vec![TaylorTerm { l: 1, m: 1, re: 1.0, im: 0.0 }],
        };
        assert!(low.validate().is_err());
        assert!(Nonlinearity::quartic(1.0).is_gauge_invariant());
        assert!(!Nonlinearity::cubic().is_gauge_invariant());
    }

    #[test]
    fn real_on_real_points() {
        let g = Nonlinearity::new(vec![
            TaylorTerm { l: 3, m: 1, re: 0.5, im: 0.25 },
            TaylorTerm { l: 1, m: 3, re: 0.5, im: -0.25 },
            TaylorTerm { l: 2, m: 2, re: -1.0, im: 0.0 },
        ])
        .unwrap();
        let u = Complex64::new(0.3, -0.8);
        assert!(g.eval(u, u.conj()).im.abs() < 1e-15);
        let h = 1e-6;
        let fd = (g.eval(u, u.conj() + h) - g.eval(u, u.conj() - h)) / (2.0 * h);
        assert!((fd - g.d_v(u, u.conj())).norm() < 1e-8);
    }
}
