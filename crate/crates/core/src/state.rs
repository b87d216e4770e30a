use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Truncated coordinates `(ξ_j, η_j)`, `j = 1..J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub xi: Vec<Complex64>,
    pub eta: Vec<Complex64>,
}

/// `j^{2s}` for `j = 1..=cutoff`.
pub fn weights(cutoff: usize, s: f64) -> Vec<f64> {
    (1..=cutoff).map(|j| (j as f64).powf(2.0 * s)).collect()
}

impl StateVector {
    pub fn zeros(cutoff: usize) -> Self {
        StateVector {
            xi: vec![Complex64::new(0.0, 0.0); cutoff],
            eta: vec![Complex64::new(0.0, 0.0); cutoff],
        }
    }

    /// Real point with `η = conj ξ`.
    pub fn from_xi(xi: Vec<Complex64>) -> Self {
        let eta = xi.iter().map(|z| z.conj()).collect();
        StateVector { xi, eta }
    }

    pub fn cutoff(&self) -> usize {
        self.xi.len()
    }

    /// Largest `|η_j − conj ξ_j|`.
    pub fn reality_defect(&self) -> f64 {
        self.xi
            .iter()
            .zip(&self.eta)
            .map(|(x, e)| (e - x.conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_real_point(&self, tol: f64) -> bool {
        self.reality_defect() <= tol
    }

    /// Project onto real points: `ξ ← (ξ + conj η)/2`, `η = conj ξ`.
    pub fn realify(&mut self) {
        for (x, e) in self.xi.iter_mut().zip(self.eta.iter_mut()) {
            *x = 0.5 * (*x + e.conj());
            *e = x.conj();
        }
    }

    /// `‖z‖_s = (Σ j^{2s} (|ξ_j|² + |η_j|²))^{1/2}`.
    pub fn norm_s(&self, s: f64) -> f64 {
        self.xi
            .iter()
            .zip(&self.eta)
            .enumerate()
            .map(|(i, (x, e))| ((i + 1) as f64).powf(2.0 * s) * (x.norm_sqr() + e.norm_sqr()))
            .sum::<f64>()
            .sqrt()
    }

    /// `Σ |ξ_j|²`, the discrete L² mass.
    pub fn l2(&self) -> f64 {
        self.xi.iter().map(|x| x.norm_sqr()).sum()
    }

    /// `I_j = ξ_j η_j` (real part; exact on real points).
    pub fn actions(&self) -> Vec<f64> {
        self.xi.iter().zip(&self.eta).map(|(x, e)| (x * e).re).collect()
    }

    /// `N(z) = 2 Σ j^{2s} ξ_j η_j`.
    pub fn n_functional(&self, s: f64) -> Complex64 {
        self.xi
            .iter()
            .zip(&self.eta)
            .enumerate()
            .map(|(i, (x, e))| 2.0 * ((i + 1) as f64).powf(2.0 * s) * x * e)
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        StateVector {
            xi: self.xi.iter().map(|x| x * c).collect(),
            eta: self.eta.iter().map(|x| x * c).collect(),
        }
    }

    /// Global gauge rotation `ξ ← e^{iθ} ξ`, `η ← e^{−iθ} η`.
    pub fn rotated(&self, theta: f64) -> Self {
        let p = Complex64::from_polar(1.0, theta);
        StateVector {
            xi: self.xi.iter().map(|x| x * p).collect(),
            eta: self.eta.iter().map(|x| x * p.conj()).collect(),
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &StateVector) -> Self {
        StateVector {
            xi: self.xi.iter().zip(&other.xi).map(|(a, b)| a + b * c).collect(),
            eta: self.eta.iter().zip(&other.eta).map(|(a, b)| a + b * c).collect(),
        }
    }

    /// `‖self − other‖_s`.
    pub fn distance_s(&self, other: &StateVector, s: f64) -> f64 {
        self.axpy(-1.0, other).norm_s(s)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.xi.iter().chain(&self.eta).map(|x| x.norm()).fold(0.0, f64::max)
    }
}
