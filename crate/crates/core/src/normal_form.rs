//! Homological equation, Lie transforms and the finite-order Birkhoff iteration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{FrequencyVector, NEAR_ZERO};
use crate::poly::{poisson_bracket, poisson_bracket_truncated, Monomial, SparsePolynomial, C64};
use crate::state::StateVector;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone)]
pub struct HomologicalSplit {
    pub chi: SparsePolynomial,
    pub z: SparsePolynomial,
    pub divisor_floor: f64,
    /// smallest `|Ω|` divided by
    pub min_divisor: f64,
    /// `max|{H_0,χ} + Q − Z| / max|Q|`
    pub residual: f64,
}

/// Sign `σ` in `b = σ i a / Ω` making `{H_0, χ} + Q = Z` hold, found by
/// solving for a single non-resonant monomial with the generic bracket.
pub fn calibrate_sign(freq: &FrequencyVector) -> Result<f64> {
    let m = Monomial::new(&[1, 1], &[1])?;
    let omega = m.omega(freq);
    let q = SparsePolynomial::from_terms(freq.cutoff(), [(m.clone(), C64::new(1.0, 0.0))])?;
    let h0 = SparsePolynomial::h0(freq);
    let mut best = f64::INFINITY;
    for sigma in [1.0, -1.0] {
        let chi = q.scale(sigma * I / omega);
        let res = poisson_bracket(&h0, &chi)?.add(&q)?.max_abs();
        if res <= 1e-14 {
            return Ok(sigma);
        }
        best = best.min(res);
    }
    Err(Error::SignCalibration(best))
}

/// Split a homogeneous `Q` into `χ` (non-action monomials divided by `Ω`) and
/// `Z` (action monomials) so that `{H_0, χ} + Q = Z`.
pub fn solve_homological(
    q: &SparsePolynomial,
    freq: &FrequencyVector,
    sigma: f64,
    floor: f64,
) -> Result<HomologicalSplit> {
    let mut chi = SparsePolynomial::zero(q.cutoff);
    let mut z = SparsePolynomial::zero(q.cutoff);
    let mut min_divisor = f64::INFINITY;
    for (m, a) in q.iter() {
        if m.is_action_type() {
            z.add_term(m.clone(), *a)?;
            continue;
        }
        let omega = m.omega(freq);
        if omega.abs() < floor {
            return Err(Error::NumericallyResonant {
                omega,
                floor,
                monomial: m.to_string(),
            });
        }
        min_divisor = min_divisor.min(omega.abs());
        chi.add_term(m.clone(), sigma * I * a / omega)?;
    }
    let h0 = SparsePolynomial::h0(freq);
    let lhs = poisson_bracket(&h0, &chi)?.add(q)?.sub(&z)?;
    let scale = q.max_abs();
    let residual = if scale > 0.0 { lhs.max_abs() / scale } else { lhs.max_abs() };
    Ok(HomologicalSplit {
        chi,
        z,
        divisor_floor: floor,
        min_divisor,
        residual,
    })
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LieTail {
    /// `ℓ¹` mass of the dropped terms above the truncation degree, each
    /// weighted by its `1/k!`
    pub tail_mass: f64,
    pub brackets: usize,
}

/// `Σ_k P^{[k]}/k!` with `P^{[k+1]} = {P^{[k]}, χ}`, truncated at degree `r`.
pub fn lie_transform_series(
    p: &SparsePolynomial,
    chi: &SparsePolynomial,
    r: usize,
) -> Result<(SparsePolynomial, LieTail)> {
    let (mut total, mut tail_mass) = p.truncate(r);
    let mut tail = LieTail::default();
    if chi.is_empty() {
        tail.tail_mass = tail_mass;
        return Ok((total, tail));
    }
    if chi.degree_bounds().map(|(lo, _)| lo).unwrap_or(3) < 3 {
        return Err(Error::InvalidArgument("generator must have degree ≥ 3".into()));
    }
    let mut term = total.clone();
    let mut k = 1usize;
    // each bracket raises the minimal degree by at least one
    while !term.is_empty() && k <= r {
        let (next, t) = poisson_bracket_truncated(&term, chi, r)?;
        tail.brackets += 1;
        let inv = 1.0 / k as f64;
        tail_mass += t * inv;
        term = next.scale(C64::new(inv, 0.0));
        total = total.add(&term)?;
        k += 1;
    }
    total.prune(crate::poly::DEFAULT_DROP_TOL);
    tail.tail_mass = tail_mass;
    Ok((total, tail))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalFormOptions {
    pub divisor_floor: f64,
    /// cap on the number of stored terms in the transformed Hamiltonian
    pub max_terms: usize,
}

impl Default for NormalFormOptions {
    fn default() -> Self {
        NormalFormOptions {
            divisor_floor: NEAR_ZERO,
            max_terms: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub degree: usize,
    pub chi_terms: usize,
    pub z_terms: usize,
    pub min_divisor: f64,
    pub homological_residual: f64,
    /// largest non-action coefficient of this degree after the transform, relative to input scale
    pub post_step_residual: f64,
    pub tail_mass: f64,
    pub chi_max: f64,
}

#[derive(Debug, Clone)]
pub struct NormalFormResult {
    pub order: usize,
    pub cutoff: usize,
    pub sigma: f64,
    pub freq: FrequencyVector,
    /// `χ_3, …, χ_r`
    pub chis: Vec<SparsePolynomial>,
    /// integrable part (degrees `3..=r`)
    pub z: SparsePolynomial,
    /// `H∘τ` truncated at degree `r`, `H_0` included
    pub transformed: SparsePolynomial,
    pub steps: Vec<StepReport>,
    pub input_scale: f64,
    /// largest non-action coefficient of degree `3..=r` in `transformed`, relative to input scale
    pub terminal_residual: f64,
}

pub const TERMINAL_TOLERANCE: f64 = 1e-10;

impl NormalFormResult {
    pub fn passes_terminal_check(&self) -> bool {
        self.terminal_residual <= TERMINAL_TOLERANCE
    }

    pub fn chi(&self, degree: usize) -> Option<&SparsePolynomial> {
        degree.checked_sub(3).and_then(|k| self.chis.get(k))
    }

    /// `H_0 + Z`.
    pub fn normal_form(&self) -> Result<SparsePolynomial> {
        SparsePolynomial::h0(&self.freq).add(&self.z)
    }

    pub fn max_homological_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.homological_residual).fold(0.0, f64::max)
    }
}

/// Normalize `H_0 + P` up to degree `r`.
pub fn birkhoff_iterate(
    p: &SparsePolynomial,
    freq: &FrequencyVector,
    r: usize,
    opts: &NormalFormOptions,
) -> Result<NormalFormResult> {
    if r < 3 {
        return Err(Error::InvalidArgument(format!("normal form order must be ≥ 3, got {r}")));
    }
    if p.cutoff != freq.cutoff() {
        return Err(Error::CutoffMismatch {
            left: p.cutoff,
            right: freq.cutoff(),
        });
    }
    if let Some((lo, _)) = p.degree_bounds() {
        if lo < 3 {
            return Err(Error::InvalidArgument("perturbation must start at degree 3".into()));
        }
    }
    if !p.reality_certificate().is_real(1e-12) {
        return Err(Error::InvalidArgument("perturbation is not real".into()));
    }
    let sigma = calibrate_sign(freq)?;
    let (p_r, _) = p.truncate(r);
    let input_scale = p_r.max_abs();
    let rel = |v: f64| if input_scale > 0.0 { v / input_scale } else { v };

    let mut h = SparsePolynomial::h0(freq).add(&p_r)?;
    let mut z = SparsePolynomial::zero(p.cutoff);
    let mut chis = Vec::new();
    let mut steps = Vec::new();
    for k in 3..=r {
        let pk = h.homogeneous_part(k);
        let split = solve_homological(&pk, freq, sigma, opts.divisor_floor)?;
        let mut tail = 0.0;
        if !split.chi.is_empty() {
            let (next, t) = lie_transform_series(&h, &split.chi, r)?;
            if next.len() > opts.max_terms {
                return Err(Error::Budget {
                    what: "transformed Hamiltonian terms",
                    needed: next.len() as u128,
                    budget: opts.max_terms as u128,
                });
            }
            h = next;
            tail = t.tail_mass;
        }
        steps.push(StepReport {
            degree: k,
            chi_terms: split.chi.len(),
            z_terms: split.z.len(),
            min_divisor: split.min_divisor,
            homological_residual: split.residual,
            post_step_residual: rel(h.homogeneous_part(k).max_non_action()),
            tail_mass: tail,
            chi_max: split.chi.max_abs(),
        });
        log::debug!("normal form step {k}: χ has {} terms, residual {:e}", split.chi.len(), split.residual);
        z = z.add(&split.z)?;
        chis.push(split.chi);
    }
    let terminal = h.filter(|m| m.degree() >= 3).max_non_action();
    Ok(NormalFormResult {
        order: r,
        cutoff: p.cutoff,
        sigma,
        freq: freq.clone(),
        chis,
        z,
        transformed: h,
        steps,
        input_scale,
        terminal_residual: rel(terminal),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowOptions {
    /// relative step-doubling tolerance
    pub tol: f64,
    pub max_steps: usize,
    /// abort when the norm exceeds this multiple of its initial value
    pub escape_factor: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: 1e-14,
            max_steps: 1 << 14,
            escape_factor: 2.0,
        }
    }
}

fn rk4_fixed(chi: &SparsePolynomial, z0: &StateVector, t: f64, n: usize, opts: &FlowOptions) -> Result<StateVector> {
    let h = t / n as f64;
    let n0 = z0.norm_s(0.0);
    let mut z = z0.clone();
    for _ in 0..n {
        let k1 = chi.lie_flow_field(&z);
        let k2 = chi.lie_flow_field(&z.axpy(0.5 * h, &k1));
        let k3 = chi.lie_flow_field(&z.axpy(0.5 * h, &k2));
        let k4 = chi.lie_flow_field(&z.axpy(h, &k3));
        z = z
            .axpy(h / 6.0, &k1)
            .axpy(h / 3.0, &k2)
            .axpy(h / 3.0, &k3)
            .axpy(h / 6.0, &k4);
        let nz = z.norm_s(0.0);
        if !nz.is_finite() || nz > opts.escape_factor * n0 {
            return Err(Error::FlowEscape {
                initial: n0,
                current: nz,
            });
        }
    }
    Ok(z)
}

/// Time-`t` flow of `ξ̇ = i∂χ/∂η, η̇ = −i∂χ/∂ξ`, RK4 with step doubling and
/// Richardson extrapolation.
pub fn lie_flow(chi: &SparsePolynomial, z: &StateVector, t: f64, opts: &FlowOptions) -> Result<StateVector> {
    if chi.is_empty() || t == 0.0 {
        return Ok(z.clone());
    }
    let scale = z.norm_s(0.0).max(f64::MIN_POSITIVE);
    let mut n = 2;
    let mut coarse = rk4_fixed(chi, z, t, n, opts)?;
    loop {
        let fine = rk4_fixed(chi, z, t, 2 * n, opts)?;
        let diff = fine.distance_s(&coarse, 0.0);
        let extrapolated = fine.axpy(1.0 / 15.0, &fine.axpy(-1.0, &coarse));
        if diff <= opts.tol * scale || 2 * n >= opts.max_steps {
            return Ok(extrapolated);
        }
        coarse = fine;
        n *= 2;
    }
}

/// `τ = φ_3 ∘ … ∘ φ_r` (forward) or its inverse.
pub fn apply_tau(
    result: &NormalFormResult,
    z: &StateVector,
    direction: Direction,
    opts: &FlowOptions,
) -> Result<StateVector> {
    let mut w = z.clone();
    match direction {
        Direction::Forward => {
            for chi in result.chis.iter().rev() {
                w = lie_flow(chi, &w, 1.0, opts)?;
            }
        }
        Direction::Inverse => {
            for chi in &result.chis {
                w = lie_flow(chi, &w, -1.0, opts)?;
            }
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalFormManifest {
    pub format_version: u32,
    pub order: usize,
    pub cutoff: usize,
    pub sigma: f64,
    pub frequencies: FrequencyVector,
    pub input_scale: f64,
    pub terminal_residual: f64,
    pub steps: Vec<StepReport>,
    pub files: Vec<String>,
    /// free-form run metadata (seed, γ, δ, …)
    pub metadata: serde_json::Value,
}

impl NormalFormResult {
    /// Write `manifest.json`, `chi_<k>.csv`, `z.csv` and `transformed.csv` under `dir`.
    pub fn save(&self, dir: &Path, metadata: serde_json::Value) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (i, chi) in self.chis.iter().enumerate() {
            let name = format!("chi_{}.csv", i + 3);
            std::fs::write(dir.join(&name), chi.to_csv())?;
            files.push(name);
        }
        std::fs::write(dir.join("z.csv"), self.z.to_csv())?;
        std::fs::write(dir.join("transformed.csv"), self.transformed.to_csv())?;
        files.push("z.csv".into());
        files.push("transformed.csv".into());
        let manifest = NormalFormManifest {
            format_version: 1,
            order: self.order,
            cutoff: self.cutoff,
            sigma: self.sigma,
            frequencies: self.freq.clone(),
            input_scale: self.input_scale,
            terminal_residual: self.terminal_residual,
            steps: self.steps.clone(),
            files: files.clone(),
            metadata,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        files.push("manifest.json".into());
        Ok(files)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| Error::MissingInput(format!("{}: {e}", dir.join(name).display())))
        };
        let m: NormalFormManifest = serde_json::from_str(&read("manifest.json")?)?;
        let chis = (3..=m.order)
            .map(|k| SparsePolynomial::from_csv(&read(&format!("chi_{k}.csv"))?))
            .collect::<Result<Vec<_>>>()?;
        Ok(NormalFormResult {
            order: m.order,
            cutoff: m.cutoff,
            sigma: m.sigma,
            freq: m.frequencies,
            chis,
            z: SparsePolynomial::from_csv(&read("z.csv")?)?,
            transformed: SparsePolynomial::from_csv(&read("transformed.csv")?)?,
            steps: m.steps,
            input_scale: m.input_scale,
            terminal_residual: m.terminal_residual,
        })
    }
}
