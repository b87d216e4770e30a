//! Time integration of the Galerkin-truncated equation
//! `ξ̇_j = −iω_j ξ_j − i ∂P/∂η_j` on real points `η = conj ξ`.
//!
//! The scheme is Strang splitting: exact rotation by the linear frequencies
//! for half a step, a full nonlinear step, another half rotation. The
//! nonlinear substep is the implicit midpoint rule (default) or classical
//! RK4. Nonlinear integrals use one Gauss–Hermite grid per homogeneous
//! degree of `g`, scaled so the Galerkin projections are exact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::FrequencyVector;
use crate::hermite::{eval_phi_all, exact_node_count, GaussHermite};
use crate::nonlinearity::Nonlinearity;
use crate::normal_form::{apply_tau, Direction, FlowOptions, NormalFormResult};
pub use crate::state::StateVector;

type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// implicit midpoint nonlinear substep
    Strang,
    /// RK4 nonlinear substep
    StrangRk4,
}

struct DegreeGrid {
    g: Nonlinearity,
    /// `φ_j(x_i)`, row-major `[node][mode]`
    phi: Vec<f64>,
    /// quadrature weights in `x`
    weights: Vec<f64>,
}

/// Galerkin nonlinearity `∂P/∂η_j = ∫ ∂_v g(u, v) φ_j dx` with `u = Σ ξ_j φ_j`, `v = Σ η_j φ_j`.
pub struct GalerkinNonlinearity {
    cutoff: usize,
    grids: Vec<DegreeGrid>,
}

impl GalerkinNonlinearity {
    pub fn new(g: &Nonlinearity, cutoff: usize) -> Result<Self> {
        g.validate()?;
        let mut grids = Vec::new();
        for d in g.degrees() {
            let n = (2 * cutoff).max(exact_node_count(d * (cutoff - 1)));
            let gh = GaussHermite::cached(n);
            let scale = (2.0 / d as f64).sqrt();
            let mut phi = Vec::with_capacity(n * cutoff);
            let mut weights = Vec::with_capacity(n);
            for (y, w) in gh.nodes.iter().zip(&gh.scaled_weights) {
                let x = y * scale;
                let vals = eval_phi_all(cutoff, x);
                // the scaled rule integrates f(x) e^{-d x²/2}-type integrands exactly
                // after removing the e^{-y²} weight: ∫ f dx = s Σ W_i f(y_i s)
                phi.extend_from_slice(&vals);
                weights.push(w * scale);
            }
            grids.push(DegreeGrid {
                g: g.homogeneous(d),
                phi,
                weights,
            });
        }
        Ok(GalerkinNonlinearity { cutoff, grids })
    }

    pub fn is_zero(&self) -> bool {
        self.grids.is_empty()
    }

    fn fields<'a>(&self, grid: &'a DegreeGrid, xi: &[C64], eta: &[C64], i: usize) -> (C64, C64, &'a [f64]) {
        let row = &grid.phi[i * self.cutoff..(i + 1) * self.cutoff];
        let mut u = C64::new(0.0, 0.0);
        let mut v = C64::new(0.0, 0.0);
        for k in 0..self.cutoff {
            u += xi[k] * row[k];
            v += eta[k] * row[k];
        }
        (u, v, row)
    }

    /// `P(ξ, η)`.
    pub fn energy(&self, xi: &[C64], eta: &[C64]) -> C64 {
        let mut e = C64::new(0.0, 0.0);
        for grid in &self.grids {
            for (i, w) in grid.weights.iter().enumerate() {
                let (u, v, _) = self.fields(grid, xi, eta, i);
                e += grid.g.eval(u, v) * *w;
            }
        }
        e
    }

    /// `∂P/∂η_j` written into `out`.
    pub fn d_eta(&self, xi: &[C64], eta: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for grid in &self.grids {
            for (i, w) in grid.weights.iter().enumerate() {
                let (u, v, row) = self.fields(grid, xi, eta, i);
                let f = grid.g.d_v(u, v) * *w;
                for k in 0..self.cutoff {
                    out[k] += f * row[k];
                }
            }
        }
    }

    /// `∂P/∂ξ_j` written into `out`.
    pub fn d_xi(&self, xi: &[C64], eta: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for grid in &self.grids {
            for (i, w) in grid.weights.iter().enumerate() {
                let (u, v, row) = self.fields(grid, xi, eta, i);
                let f = grid.g.d_u(u, v) * *w;
                for k in 0..self.cutoff {
                    out[k] += f * row[k];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub dt: f64,
    pub t_final: f64,
    /// record every this many steps (the final time is always recorded)
    pub record_stride: usize,
    pub s_list: Vec<f64>,
    pub scheme: Scheme,
    /// abort when `‖z‖_s` (first `s`) exceeds this multiple of its initial value
    pub blowup_factor: f64,
    /// keep full states at the recorded times
    pub keep_states: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt: 1e-2,
            t_final: 1.0,
            record_stride: 10,
            s_list: vec![1.0],
            scheme: Scheme::Strang,
            blowup_factor: 2.0,
            keep_states: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub energy: f64,
    pub l2: f64,
    /// `‖z‖_s` per configured `s`
    pub norms: Vec<f64>,
    /// `Σ j^{2s}|I_j(t) − I_j(0)|` per configured `s`
    pub drifts: Vec<f64>,
    /// `Σ_{j > J/2} I_j`
    pub tail: f64,
    pub actions: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub scheme: Scheme,
    pub s_list: Vec<f64>,
    pub samples: Vec<Sample>,
    pub states: Vec<StateVector>,
}

fn weighted_drift(a: &[f64], a0: &[f64], s: f64) -> f64 {
    a.iter()
        .zip(a0)
        .enumerate()
        .map(|(i, (x, y))| ((i + 1) as f64).powf(2.0 * s) * (x - y).abs())
        .sum()
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn final_state(&self) -> Option<&StateVector> {
        self.states.last()
    }

    /// Largest `|H(t) − H(0)|`.
    pub fn energy_error(&self) -> f64 {
        let e0 = self.samples.first().map(|s| s.energy).unwrap_or(0.0);
        self.samples.iter().map(|s| (s.energy - e0).abs()).fold(0.0, f64::max)
    }

    /// Largest `|Σ|ξ|²(t) − Σ|ξ|²(0)|`.
    pub fn mass_error(&self) -> f64 {
        let m0 = self.samples.first().map(|s| s.l2).unwrap_or(0.0);
        self.samples.iter().map(|s| (s.l2 - m0).abs()).fold(0.0, f64::max)
    }

    /// Trajectory CSV for the `s_index`-th weight: `t,H,l2,norm_s,drift_s,tail`.
    pub fn to_csv(&self, s_index: usize) -> String {
        let f = crate::io::fmt17;
        let mut out = String::from("t,H,l2,norm_s,drift_s,tail\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f(s.t),
                f(s.energy),
                f(s.l2),
                f(s.norms[s_index]),
                f(s.drifts[s_index]),
                f(s.tail)
            ));
        }
        out
    }

    /// Per-mode actions `t,I_1,…,I_J` at every `stride`-th sample.
    pub fn actions_csv(&self, stride: usize) -> String {
        let cutoff = self.samples.first().map(|s| s.actions.len()).unwrap_or(0);
        let mut out = String::from("t");
        for j in 1..=cutoff {
            out.push_str(&format!(",I_{j}"));
        }
        out.push('\n');
        for s in self.samples.iter().step_by(stride.max(1)) {
            out.push_str(&crate::io::fmt17(s.t));
            for a in &s.actions {
                out.push(',');
                out.push_str(&crate::io::fmt17(*a));
            }
            out.push('\n');
        }
        out
    }
}

pub struct Evolver {
    pub freq: FrequencyVector,
    pub g: Nonlinearity,
    nonlinear: GalerkinNonlinearity,
}

/// Fixed-point iterations allowed per implicit midpoint step.
const MIDPOINT_MAX_ITER: usize = 200;

impl Evolver {
    pub fn new(freq: &FrequencyVector, g: &Nonlinearity) -> Result<Self> {
        Ok(Evolver {
            freq: freq.clone(),
            g: g.clone(),
            nonlinear: GalerkinNonlinearity::new(g, freq.cutoff())?,
        })
    }

    pub fn cutoff(&self) -> usize {
        self.freq.cutoff()
    }

    /// `H = Σ ω_j ξ_j η_j + P(ξ, η)` (real part).
    pub fn hamiltonian(&self, z: &StateVector) -> f64 {
        let lin: C64 = (0..self.cutoff()).map(|k| self.freq.omega[k] * z.xi[k] * z.eta[k]).sum();
        (lin + self.nonlinear.energy(&z.xi, &z.eta)).re
    }

    /// Full right-hand side on a real point: `ξ̇ = −iωξ − i∂P/∂η`.
    pub fn rhs(&self, xi: &[C64]) -> Vec<C64> {
        let eta: Vec<C64> = xi.iter().map(|x| x.conj()).collect();
        let mut f = vec![C64::new(0.0, 0.0); xi.len()];
        self.nonlinear.d_eta(xi, &eta, &mut f);
        (0..xi.len())
            .map(|k| C64::new(0.0, -1.0) * (self.freq.omega[k] * xi[k] + f[k]))
            .collect()
    }

    fn nonlinear_rhs(&self, xi: &[C64], eta: &mut [C64], out: &mut [C64]) {
        for (e, x) in eta.iter_mut().zip(xi) {
            *e = x.conj();
        }
        self.nonlinear.d_eta(xi, eta, out);
        for o in out.iter_mut() {
            *o *= C64::new(0.0, -1.0);
        }
    }

    fn rotate(&self, xi: &mut [C64], h: f64) {
        for (k, x) in xi.iter_mut().enumerate() {
            *x *= C64::from_polar(1.0, -self.freq.omega[k] * h);
        }
    }

    fn midpoint(&self, xi: &mut [C64], h: f64) -> Result<()> {
        let n = xi.len();
        let mut eta = vec![C64::new(0.0, 0.0); n];
        let mut f = vec![C64::new(0.0, 0.0); n];
        let mut mid = xi.to_vec();
        let mut next = xi.to_vec();
        let scale = xi.iter().map(|x| x.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for _ in 0..MIDPOINT_MAX_ITER {
            self.nonlinear_rhs(&mid, &mut eta, &mut f);
            let mut change = 0.0_f64;
            for k in 0..n {
                let cand = xi[k] + f[k] * h;
                change = change.max((cand - next[k]).norm());
                next[k] = cand;
                mid[k] = 0.5 * (xi[k] + cand);
            }
            if change <= 4.0 * f64::EPSILON * scale {
                xi.copy_from_slice(&next);
                return Ok(());
            }
        }
        Err(Error::InvalidArgument(format!(
            "implicit midpoint iteration did not converge at step size {h}"
        )))
    }

    fn rk4(&self, xi: &mut [C64], h: f64) {
        let n = xi.len();
        let mut eta = vec![C64::new(0.0, 0.0); n];
        let mut k1 = vec![C64::new(0.0, 0.0); n];
        let mut k2 = k1.clone();
        let mut k3 = k1.clone();
        let mut k4 = k1.clone();
        let mut tmp = xi.to_vec();
        self.nonlinear_rhs(xi, &mut eta, &mut k1);
        for k in 0..n {
            tmp[k] = xi[k] + k1[k] * (0.5 * h);
        }
        self.nonlinear_rhs(&tmp, &mut eta, &mut k2);
        for k in 0..n {
            tmp[k] = xi[k] + k2[k] * (0.5 * h);
        }
        self.nonlinear_rhs(&tmp, &mut eta, &mut k3);
        for k in 0..n {
            tmp[k] = xi[k] + k3[k] * h;
        }
        self.nonlinear_rhs(&tmp, &mut eta, &mut k4);
        for k in 0..n {
            xi[k] += (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]) * (h / 6.0);
        }
    }

    /// One Strang step of size `h` (negative `h` integrates backwards).
    pub fn step(&self, xi: &mut [C64], h: f64, scheme: Scheme) -> Result<()> {
        self.rotate(xi, 0.5 * h);
        if !self.nonlinear.is_zero() {
            match scheme {
                Scheme::Strang => self.midpoint(xi, h)?,
                Scheme::StrangRk4 => self.rk4(xi, h),
            }
        }
        self.rotate(xi, 0.5 * h);
        Ok(())
    }

    fn sample(&self, t: f64, z: &StateVector, a0: &[f64], s_list: &[f64]) -> Sample {
        let actions = z.actions();
        let half = self.cutoff() / 2;
        Sample {
            t,
            energy: self.hamiltonian(z),
            l2: z.l2(),
            norms: s_list.iter().map(|&s| z.norm_s(s)).collect(),
            drifts: s_list.iter().map(|&s| weighted_drift(&actions, a0, s)).collect(),
            tail: actions[half..].iter().sum(),
            actions,
        }
    }

    /// Integrate from the real point `z0` over `[0, t_final]` (or backwards for negative `dt`).
    pub fn evolve(&self, z0: &StateVector, opts: &EvolveOptions) -> Result<TrajectoryRecord> {
        if z0.cutoff() != self.cutoff() {
            return Err(Error::CutoffMismatch {
                left: z0.cutoff(),
                right: self.cutoff(),
            });
        }
        if !z0.is_real_point(1e-14 * z0.max_abs().max(1.0)) {
            return Err(Error::InvalidArgument("initial state is not a real point".into()));
        }
        if opts.dt == 0.0 || !opts.dt.is_finite() || opts.t_final < 0.0 {
            return Err(Error::InvalidArgument("need finite dt ≠ 0 and t_final ≥ 0".into()));
        }
        let s_list = if opts.s_list.is_empty() { vec![0.0] } else { opts.s_list.clone() };
        let steps = (opts.t_final / opts.dt.abs()).round() as usize;
        let stride = opts.record_stride.max(1);
        let mut xi = z0.xi.clone();
        let a0 = z0.actions();
        let norm0 = z0.norm_s(s_list[0]);
        let mut rec = TrajectoryRecord {
            dt: opts.dt,
            scheme: opts.scheme,
            s_list: s_list.clone(),
            samples: vec![self.sample(0.0, z0, &a0, &s_list)],
            states: if opts.keep_states { vec![z0.clone()] } else { vec![] },
        };
        for n in 1..=steps {
            self.step(&mut xi, opts.dt, opts.scheme)?;
            if n % stride == 0 || n == steps {
                let z = StateVector::from_xi(xi.clone());
                let t = n as f64 * opts.dt;
                let norm = z.norm_s(s_list[0]);
                if !norm.is_finite() || norm > opts.blowup_factor * norm0 {
                    return Err(Error::BlowUp {
                        time: t,
                        norm,
                        initial: norm0,
                    });
                }
                rec.samples.push(self.sample(t, &z, &a0, &s_list));
                if opts.keep_states {
                    rec.states.push(z);
                }
            }
        }
        if !opts.keep_states {
            rec.states.push(StateVector::from_xi(xi));
        }
        Ok(rec)
    }
}

/// Index of `s` in the record's weight list.
fn s_index(traj: &TrajectoryRecord, s: f64) -> Result<usize> {
    traj.s_list
        .iter()
        .position(|&x| x == s)
        .ok_or_else(|| Error::InvalidArgument(format!("s = {s} was not recorded")))
}

/// `max_t Σ j^{2s} |I_j(t) − I_j(0)|` over the recorded grid.
pub fn measure_action_drift(traj: &TrajectoryRecord, s: f64) -> Result<f64> {
    let i = s_index(traj, s)?;
    Ok(traj.samples.iter().map(|x| x.drifts[i]).fold(0.0, f64::max))
}

/// Actions of `τ^{-1}(z(t))` at every stored state.
pub fn normalized_actions(
    traj: &TrajectoryRecord,
    result: &NormalFormResult,
    flow: &FlowOptions,
) -> Result<Vec<Vec<f64>>> {
    if traj.states.len() != traj.samples.len() {
        return Err(Error::MissingInput("trajectory was recorded without states".into()));
    }
    traj.states
        .iter()
        .map(|z| apply_tau(result, z, Direction::Inverse, flow).map(|w| w.actions()))
        .collect()
}

/// Drift functional measured in normalized coordinates.
pub fn normalized_action_drift(
    traj: &TrajectoryRecord,
    result: &NormalFormResult,
    s: f64,
    flow: &FlowOptions,
) -> Result<f64> {
    let acts = normalized_actions(traj, result, flow)?;
    let a0 = &acts[0];
    Ok(acts.iter().map(|a| weighted_drift(a, a0, s)).fold(0.0, f64::max))
}

/// `(t, [Σ j^{2s} |√I′_j(t) − √I′_j(0)|²]^{1/2})` in normalized coordinates.
pub fn distance_to_torus(
    traj: &TrajectoryRecord,
    result: &NormalFormResult,
    s: f64,
    flow: &FlowOptions,
) -> Result<Vec<(f64, f64)>> {
    let acts = normalized_actions(traj, result, flow)?;
    let root = |a: &[f64]| a.iter().map(|x| x.max(0.0).sqrt()).collect::<Vec<_>>();
    let r0 = root(&acts[0]);
    Ok(traj
        .samples
        .iter()
        .zip(&acts)
        .map(|(smp, a)| {
            let d: f64 = root(a)
                .iter()
                .zip(&r0)
                .enumerate()
                .map(|(i, (x, y))| ((i + 1) as f64).powf(2.0 * s) * (x - y).powi(2))
                .sum();
            (smp.t, d.sqrt())
        })
        .collect())
}

/// Real point with `‖z‖_s = eps` and direction `profile`.
pub fn scaled_initial_state(profile: &[C64], eps: f64, s: f64) -> StateVector {
    let z = StateVector::from_xi(profile.to_vec());
    let n = z.norm_s(s);
    z.scaled(eps / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::expand_nonlinearity;

    fn profile(j: usize) -> Vec<C64> {
        let mut p = vec![C64::new(0.0, 0.0); j];
        p[0] = C64::new(0.8, 0.1);
        p[1] = C64::new(-0.3, 0.4);
        p[2] = C64::new(0.2, -0.2);
        p
    }

    #[test]
    fn galerkin_matches_polynomial_expansion() {
        let g = Nonlinearity::new(vec![
            crate::nonlinearity::TaylorTerm { l: 2, m: 1, re: 0.4, im: 0.3 },
            crate::nonlinearity::TaylorTerm { l: 1, m: 2, re: 0.4, im: -0.3 },
            crate::nonlinearity::TaylorTerm { l: 2, m: 2, re: 1.0, im: 0.0 },
        ])
        .unwrap();
        let p = expand_nonlinearity(&g, 4, 6).unwrap();
        let gal = GalerkinNonlinearity::new(&g, 6).unwrap();
        let z = StateVector::from_xi((0..6).map(|k| C64::new(0.1 * k as f64 - 0.2, 0.05 * k as f64)).collect());
        assert!((gal.energy(&z.xi, &z.eta) - p.evaluate(&z)).norm() < 1e-14);
        let (dxi, deta) = p.gradient(&z);
        let mut a = vec![C64::new(0.0, 0.0); 6];
        let mut b = a.clone();
        gal.d_eta(&z.xi, &z.eta, &mut a);
        gal.d_xi(&z.xi, &z.eta, &mut b);
        for k in 0..6 {
            assert!((a[k] - deta[k]).norm() < 1e-14);
            assert!((b[k] - dxi[k]).norm() < 1e-14);
        }
    }

    #[test]
    fn linear_flow_keeps_actions() {
        let f = FrequencyVector::sampled(1, 6, 1);
        let ev = Evolver::new(&f, &Nonlinearity::zero()).unwrap();
        let z0 = scaled_initial_state(&profile(6), 0.1, 1.0);
        let tr = ev
            .evolve(&z0, &EvolveOptions { dt: 0.05, t_final: 20.0, ..Default::default() })
            .unwrap();
        assert!(measure_action_drift(&tr, 1.0).unwrap() < 1e-15);
        assert!(tr.samples.iter().all(|s| (s.norms[0] - 0.1).abs() < 1e-15));
    }

    #[test]
    fn mass_is_conserved_for_gauge_invariant_g() {
        let f = FrequencyVector::sampled(1, 8, 3);
        let ev = Evolver::new(&f, &Nonlinearity::quartic(1.0)).unwrap();
        let z0 = scaled_initial_state(&profile(8), 0.3, 0.0);
        let tr = ev
            .evolve(&z0, &EvolveOptions { dt: 0.01, t_final: 5.0, ..Default::default() })
            .unwrap();
        assert!(tr.mass_error() <= 1e-12 * 5.0);
    }

    #[test]
    fn reality_is_preserved() {
        let f = FrequencyVector::sampled(1, 6, 2);
        let ev = Evolver::new(&f, &Nonlinearity::cubic()).unwrap();
        let z0 = scaled_initial_state(&profile(6), 0.05, 0.0);
        for scheme in [Scheme::Strang, Scheme::StrangRk4] {
            let tr = ev
                .evolve(&z0, &EvolveOptions { dt: 0.01, t_final: 1.0, scheme, keep_states: true, ..Default::default() })
                .unwrap();
            assert!(tr.states.iter().all(|z| z.is_real_point(0.0)));
            assert!(tr.energy_error() < 1e-6);
        }
    }

    #[test]
    fn blow_up_aborts() {
        let f = FrequencyVector::sampled(1, 4, 2);
        let ev = Evolver::new(&f, &Nonlinearity::quartic(1.0)).unwrap();
        let z0 = scaled_initial_state(&profile(4), 0.1, 1.0);
        // a threshold below the conserved-mass level trips on the first recorded sample
        let opts = EvolveOptions { dt: 0.01, t_final: 1.0, blowup_factor: 0.5, ..Default::default() };
        assert!(matches!(ev.evolve(&z0, &opts), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn trajectory_csv_shape() {
        let f = FrequencyVector::sampled(1, 4, 2);
        let ev = Evolver::new(&f, &Nonlinearity::quartic(1.0)).unwrap();
        let z0 = scaled_initial_state(&profile(4), 0.1, 1.0);
        let tr = ev
            .evolve(&z0, &EvolveOptions { dt: 0.1, t_final: 1.0, record_stride: 2, ..Default::default() })
            .unwrap();
        let csv = tr.to_csv(0);
        assert!(csv.starts_with("t,H,l2,norm_s,drift_s,tail\n"));
        assert_eq!(csv.lines().count(), 1 + 6);
        let times = tr.times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(tr.actions_csv(1).lines().next().unwrap(), "t,I_1,I_2,I_3,I_4");
    }
}
