//! Experiment configuration, the end-to-end pipeline, run manifests and plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    distance_to_torus, measure_action_drift, normalized_action_drift, scaled_initial_state, EvolveOptions, Evolver,
    Scheme,
};
use crate::error::{Error, Result};
use crate::frequency::{for_each_divisor, scan_nonresonance, FrequencyVector};
use crate::hermite::{for_each_overlap, loglog_slope, ordered_stats};
use crate::io::{fmt17, write_text};
use crate::nonlinearity::Nonlinearity;
use crate::normal_form::{apply_tau, birkhoff_iterate, Direction, FlowOptions, NormalFormOptions, TERMINAL_TOLERANCE};
use crate::poly::expand_nonlinearity;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";
pub const SLOPE_FILE: &str = "drift_slope.txt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// fixed final time
    Fixed(f64),
    /// final time `c / ε`
    OverEps(f64),
}

impl Horizon {
    pub fn at(&self, eps: f64) -> f64 {
        match *self {
            Horizon::Fixed(t) => t,
            Horizon::OverEps(c) => c / eps,
        }
    }
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_stride() -> usize {
    10
}
fn default_decay_cutoff() -> usize {
    40
}
fn default_true() -> bool {
    true
}
fn default_scheme() -> Scheme {
    Scheme::Strang
}
fn default_tau_radius() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// number of modes `J`
    pub cutoff: usize,
    /// normal-form order `r`
    pub order: usize,
    /// multiplier class `k`
    pub multiplier_class: u32,
    pub seed: u64,
    /// use `m = 0` instead of a sampled multiplier
    #[serde(default)]
    pub unperturbed: bool,
    pub gamma: f64,
    pub delta: f64,
    pub nonlinearity: Nonlinearity,
    pub s_list: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub dt: f64,
    pub horizon: Horizon,
    /// extra step sizes for the energy-error convergence study (run at the first ε over `t = 10`)
    #[serde(default)]
    pub dt_study: Vec<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// initial profile `(re, im)` per mode, rescaled to `‖z‖_s = ε`; defaults to a fixed four-mode profile
    #[serde(default)]
    pub initial_profile: Option<Vec<[f64; 2]>>,
    /// measure drift and torus distance in normalized coordinates
    #[serde(default = "default_true")]
    pub normalized_dynamics: bool,
    /// cutoff for the cubic overlap-ratio histogram
    #[serde(default = "default_decay_cutoff")]
    pub decay_cutoff: usize,
    /// `‖z‖_1` at which the τ contract is sampled
    #[serde(default = "default_tau_radius")]
    pub tau_radius: f64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Small default: `J = 4`, `r = 3`, `g = u²v + uv²`.
    pub fn minimal(output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            cutoff: 4,
            order: 3,
            multiplier_class: 1,
            seed: 1,
            unperturbed: false,
            gamma: 1e-4,
            delta: 4.0,
            nonlinearity: Nonlinearity::cubic(),
            s_list: vec![1.0],
            eps_list: vec![0.05, 0.025],
            dt: 0.01,
            horizon: Horizon::Fixed(5.0),
            dt_study: vec![],
            scheme: Scheme::Strang,
            record_stride: 10,
            initial_profile: None,
            normalized_dynamics: true,
            decay_cutoff: 20,
            tau_radius: 1e-2,
            output_dir: output_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        if self.order < 3 {
            return bad(format!("order r must be ≥ 3, got {}", self.order));
        }
        if self.cutoff == 0 {
            return bad("cutoff J must be ≥ 1".into());
        }
        if self.multiplier_class == 0 {
            return bad("multiplier class k must be ≥ 1".into());
        }
        if !(self.gamma >= 0.0 && self.delta >= 0.0) {
            return bad("γ and δ must be non-negative".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive".into());
        }
        if self.dt_study.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return bad("dt_study entries must be positive".into());
        }
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("ε values must be positive".into());
        }
        if self.s_list.is_empty() {
            return bad("s_list must not be empty".into());
        }
        match self.horizon {
            Horizon::Fixed(t) | Horizon::OverEps(t) if !(t >= 0.0 && t.is_finite()) => {
                return bad("horizon must be non-negative".into())
            }
            _ => {}
        }
        if let Some(p) = &self.initial_profile {
            if p.len() > self.cutoff || p.iter().all(|c| c[0] == 0.0 && c[1] == 0.0) {
                return bad("initial profile must be non-zero and fit in the cutoff".into());
            }
        }
        if self.decay_cutoff == 0 {
            return bad("decay_cutoff must be ≥ 1".into());
        }
        self.nonlinearity
            .validate()
            .map_err(|e| Error::Config(format!("nonlinearity: {e}")))
    }

    /// SHA-256 of the canonical JSON serialization, with the output directory blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn profile(&self) -> Vec<Complex64> {
        let mut p = vec![Complex64::new(0.0, 0.0); self.cutoff];
        match &self.initial_profile {
            Some(v) => {
                for (k, c) in v.iter().enumerate() {
                    p[k] = Complex64::new(c[0], c[1]);
                }
            }
            None => {
                for (k, c) in p.iter_mut().enumerate().take(4) {
                    *c = Complex64::from_polar(1.0 / (k + 1) as f64, 1.3 * k as f64 + 0.4);
                }
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRow {
    pub criterion: u32,
    pub description: String,
    pub value: String,
    pub pass: Option<bool>,
}

/// Everything needed to reproduce and audit a run. Wall-clock data lives in
/// `timing.json` so identical configurations produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    pub acceptance: Vec<AcceptanceRow>,
    pub files: Vec<String>,
    pub timing_file: String,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn value(&self, stage: &str, key: &str) -> Option<f64> {
        self.stage(stage).and_then(|s| s.values.get(key)).copied()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    started_unix: f64,
    finished_unix: f64,
    stage_seconds: BTreeMap<String, f64>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct Run {
    dir: PathBuf,
    files: Vec<String>,
    stages: Vec<StageRecord>,
    timing: BTreeMap<String, f64>,
}

impl Run {
    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&mut Run, &mut BTreeMap<String, f64>) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let mut values = BTreeMap::new();
        let out = f(self, &mut values).map_err(|e| e.in_stage(name))?;
        self.stages.push(StageRecord {
            name: name.into(),
            values,
        });
        self.timing.insert(name.into(), start.elapsed().as_secs_f64());
        log::info!("stage {name} done in {:.3}s", start.elapsed().as_secs_f64());
        Ok(out)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "n/a".into())
}

/// Run every stage in order: sample, scan, expand, normal form, evolve, reports.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started = unix_now();
    let mut run = Run {
        dir: cfg.output_dir.clone(),
        files: vec![],
        stages: vec![],
        timing: BTreeMap::new(),
    };
    std::fs::create_dir_all(&run.dir)?;
    let j = cfg.cutoff;
    let r = cfg.order;

    let freq = run.stage("sample", |run, v| {
        let freq = if cfg.unperturbed {
            FrequencyVector::unperturbed(j)
        } else {
            FrequencyVector::sampled(cfg.multiplier_class, j, cfg.seed)
        };
        let mut csv = String::from("j,omega,m\n");
        for k in 1..=j {
            csv.push_str(&format!("{k},{},{}\n", fmt17(freq.get(k)), fmt17(freq.multiplier(k))));
        }
        run.write("frequencies.csv", &csv)?;
        v.insert("max_abs_multiplier".into(), (1..=j).map(|k| freq.multiplier(k).abs()).fold(0.0, f64::max));
        Ok(freq)
    })?;

    let certified = run.stage("scan", |run, v| {
        let rep = scan_nonresonance(&freq, r, j, cfg.gamma, cfg.delta)?;
        run.write("violations.csv", &rep.violations_csv())?;
        run.write("scan_summary.md", &rep.summary_markdown())?;
        let mut spectrum = String::from("arity,omega,ratio\n");
        for_each_divisor(&freq, r, j, |p, m, omega, st| {
            let ratio = omega.abs() * (st.mu as f64).powf(cfg.delta) / (1.0 + st.s as f64);
            spectrum.push_str(&format!("{},{},{}\n", p.len() + m.len(), fmt17(omega), fmt17(ratio)));
        });
        run.write("divisors.csv", &spectrum)?;
        v.insert("divisors_checked".into(), rep.checked as f64);
        v.insert("violations".into(), rep.violations.len() as f64);
        v.insert("numerical_zeros".into(), rep.zero_divisors.len() as f64);
        v.insert("admissible_gamma".into(), rep.admissible_gamma);
        v.insert("certified_gamma".into(), rep.admissible_gamma.min(cfg.gamma));
        Ok(rep.admissible_gamma)
    })?;

    run.stage("overlap_decay", |run, v| {
        let (nu, beta) = (0.2, 1.0 / 24.0);
        let mut csv = String::from("j1,j2,j3,a,ratio\n");
        let mut sup = 0.0_f64;
        for_each_overlap(3, cfg.decay_cutoff, |t, a| {
            let (mu, c, big_a) = ordered_stats(t);
            let ratio = a.abs() * c.powf(beta) / (mu.powf(nu) * big_a);
            sup = sup.max(ratio);
            csv.push_str(&format!("{},{},{},{},{}\n", t[0], t[1], t[2], fmt17(a), fmt17(ratio)));
        });
        run.write("overlap_ratios.csv", &csv)?;
        v.insert("c_1".into(), sup);
        Ok(())
    })?;

    let p = run.stage("expand", |run, v| {
        let p = expand_nonlinearity(&cfg.nonlinearity, r, j)?;
        run.write("perturbation.csv", &p.to_csv())?;
        v.insert("terms".into(), p.len() as f64);
        v.insert("reality_mismatch".into(), p.reality_certificate().mismatch);
        Ok(p)
    })?;

    let nf = run.stage("normal_form", |run, v| {
        let nf = birkhoff_iterate(&p, &freq, r, &NormalFormOptions::default())?;
        let meta = serde_json::json!({
            "seed": cfg.seed,
            "multiplier_class": cfg.multiplier_class,
            "gamma": cfg.gamma,
            "delta": cfg.delta,
        });
        for f in nf.save(&run.dir.join("normal_form"), meta)? {
            run.files.push(format!("normal_form/{f}"));
        }
        v.insert("sigma".into(), nf.sigma);
        v.insert("terminal_residual".into(), nf.terminal_residual);
        v.insert("max_homological_residual".into(), nf.max_homological_residual());
        v.insert("z_terms".into(), nf.z.len() as f64);
        v.insert("z_reality_mismatch".into(), nf.z.reality_certificate().mismatch);
        // smoothing: c⁺(χ_3; ν+δ) ≤ c(P_3; ν) / γ
        let (nu, beta) = (0.2, 1.0 / 24.0);
        let src = p.homogeneous_part(3).class_diagnostic(nu, beta, &[1]);
        v.insert("class_c1_p3".into(), src.c[0]);
        if let Some(chi) = nf.chi(3).filter(|c| !c.is_empty()) {
            let d = chi.class_diagnostic(nu + cfg.delta, beta, &[1]);
            v.insert("class_c1_plus_chi3".into(), d.c_plus[0]);
            if certified > 0.0 && src.c[0] > 0.0 {
                v.insert("smoothing_ratio_3".into(), d.c_plus[0] * certified / src.c[0]);
            }
        }
        for s in &nf.steps {
            v.insert(format!("homological_residual_{}", s.degree), s.homological_residual);
            v.insert(format!("chi_terms_{}", s.degree), s.chi_terms as f64);
        }
        // τ contract and round trip at one radius
        let flow = FlowOptions::default();
        let z = scaled_initial_state(&cfg.profile(), cfg.tau_radius, 1.0);
        let w = apply_tau(&nf, &z, Direction::Forward, &flow)?;
        let back = apply_tau(&nf, &w, Direction::Inverse, &flow)?;
        let n = z.norm_s(1.0);
        v.insert("tau_ratio".into(), w.distance_s(&z, 1.0) / (n * n));
        v.insert("tau_round_trip".into(), back.distance_s(&z, 1.0) / n);
        Ok(nf)
    })?;

    run.stage("evolve", |run, v| {
        let ev = Evolver::new(&freq, &cfg.nonlinearity)?;
        let flow = FlowOptions::default();
        let s0 = cfg.s_list[0];
        let mut drift_csv = String::from("eps,drift,normalized_drift\n");
        let mut drifts = Vec::new();
        for (i, &eps) in cfg.eps_list.iter().enumerate() {
            let z0 = scaled_initial_state(&cfg.profile(), eps, s0);
            let opts = EvolveOptions {
                dt: cfg.dt,
                t_final: cfg.horizon.at(eps),
                record_stride: cfg.record_stride,
                s_list: cfg.s_list.clone(),
                scheme: cfg.scheme,
                blowup_factor: 2.0,
                keep_states: cfg.normalized_dynamics,
            };
            let tr = ev.evolve(&z0, &opts)?;
            for (k, s) in cfg.s_list.iter().enumerate() {
                run.write(&format!("trajectory_eps{i}_s{s}.csv"), &tr.to_csv(k))?;
            }
            run.write(&format!("actions_eps{i}.csv"), &tr.actions_csv(1))?;
            let d = measure_action_drift(&tr, s0)?;
            let dn = if cfg.normalized_dynamics {
                let dn = normalized_action_drift(&tr, &nf, s0, &flow)?;
                let tor = distance_to_torus(&tr, &nf, s0, &flow)?;
                let mut csv = String::from("t,distance\n");
                for (t, dist) in &tor {
                    csv.push_str(&format!("{},{}\n", fmt17(*t), fmt17(*dist)));
                }
                run.write(&format!("torus_distance_eps{i}.csv"), &csv)?;
                v.insert(format!("torus_max_eps{i}"), tor.iter().map(|x| x.1).fold(0.0, f64::max));
                Some(dn)
            } else {
                None
            };
            drift_csv.push_str(&format!(
                "{},{},{}\n",
                fmt17(eps),
                fmt17(d),
                dn.map(fmt17).unwrap_or_default()
            ));
            v.insert(format!("drift_eps{i}"), d);
            v.insert(format!("energy_error_eps{i}"), tr.energy_error());
            v.insert(format!("mass_error_eps{i}"), tr.mass_error());
            v.insert(format!("tail_eps{i}"), tr.samples.last().map(|s| s.tail).unwrap_or(0.0));
            drifts.push((eps, d));
        }
        if !cfg.eps_list.is_empty() {
            run.write("drift_vs_eps.csv", &drift_csv)?;
        }
        if drifts.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = drifts.iter().copied().unzip();
            let slope = loglog_slope(&xs, &ys);
            run.write(SLOPE_FILE, &format!("{}\n", fmt17(slope)))?;
            v.insert("drift_slope".into(), slope);
        }
        if !cfg.dt_study.is_empty() {
            let eps = cfg.eps_list.first().copied().unwrap_or(0.1);
            let z0 = scaled_initial_state(&cfg.profile(), eps, s0);
            let mut csv = String::from("dt,energy_error\n");
            let mut errs = Vec::new();
            for &dt in &cfg.dt_study {
                let tr = ev.evolve(
                    &z0,
                    &EvolveOptions {
                        dt,
                        t_final: 10.0,
                        record_stride: 1,
                        s_list: vec![s0],
                        scheme: cfg.scheme,
                        blowup_factor: 2.0,
                        keep_states: false,
                    },
                )?;
                csv.push_str(&format!("{},{}\n", fmt17(dt), fmt17(tr.energy_error())));
                errs.push(tr.energy_error());
            }
            run.write("energy_vs_dt.csv", &csv)?;
            if errs.len() >= 2 {
                v.insert("energy_error_ratio".into(), errs[0] / errs[1]);
            }
        }
        Ok(())
    })?;

    let acceptance = acceptance_rows(&run.stages);
    let mut manifest = RunManifest {
        schema_version: CONFIG_SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        stages: run.stages.clone(),
        acceptance,
        files: vec![],
        timing_file: TIMING_FILE.into(),
    };
    run.write("summary.md", &summary_markdown(&manifest))?;
    let timing = Timing {
        started_unix: started,
        finished_unix: unix_now(),
        stage_seconds: run.timing.clone(),
    };
    write_text(&run.dir.join(TIMING_FILE), &serde_json::to_string_pretty(&timing)?)?;
    run.files.sort();
    manifest.files = run.files.clone();
    write_text(&run.dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn acceptance_rows(stages: &[StageRecord]) -> Vec<AcceptanceRow> {
    let get = |s: &str, k: &str| {
        stages
            .iter()
            .find(|x| x.name == s)
            .and_then(|x| x.values.get(k))
            .copied()
    };
    let mut rows = Vec::new();
    let hom = get("normal_form", "max_homological_residual");
    rows.push(AcceptanceRow {
        criterion: 6,
        description: "homological residual ≤ 1e-10 at every step".into(),
        value: fmt_opt(hom),
        pass: hom.map(|x| x <= 1e-10),
    });
    let term = get("normal_form", "terminal_residual");
    rows.push(AcceptanceRow {
        criterion: 7,
        description: format!("terminal non-normal residual ≤ {TERMINAL_TOLERANCE:e} × input scale"),
        value: fmt_opt(term),
        pass: term.map(|x| x <= TERMINAL_TOLERANCE),
    });
    let rt = get("normal_form", "tau_round_trip");
    rows.push(AcceptanceRow {
        criterion: 8,
        description: "τ round trip ≤ 1e-9 ‖z‖ (ratio ‖τ(z)−z‖/‖z‖² reported)".into(),
        value: format!("{} (ratio {})", fmt_opt(rt), fmt_opt(get("normal_form", "tau_ratio"))),
        pass: rt.map(|x| x <= 1e-9),
    });
    let slope = get("evolve", "drift_slope");
    rows.push(AcceptanceRow {
        criterion: 9,
        description: "drift-vs-ε fitted exponent ≥ 2.5".into(),
        value: fmt_opt(slope),
        pass: slope.map(|x| x >= 2.5),
    });
    let ratio = get("evolve", "energy_error_ratio");
    rows.push(AcceptanceRow {
        criterion: 10,
        description: "energy-error ratio dt vs dt/2 in [3.5, 4.5]".into(),
        value: fmt_opt(ratio),
        pass: ratio.map(|x| (3.5..=4.5).contains(&x)),
    });
    let viol = get("scan", "violations");
    rows.push(AcceptanceRow {
        criterion: 11,
        description: "no sub-γ divisor in the scan".into(),
        value: format!(
            "{} violations, admissible γ {}",
            viol.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into()),
            fmt_opt(get("scan", "admissible_gamma"))
        ),
        pass: viol.map(|x| x == 0.0),
    });
    rows
}

fn summary_markdown(m: &RunManifest) -> String {
    let c = &m.config;
    let mut s = format!(
        "# Run summary\n\nconfig hash `{}`, code version {}\n\nJ = {}, r = {}, k = {}, seed = {}, γ = {:e}, δ = {}, dt = {}, ε = {:?}\n\n",
        m.config_hash, m.code_version, c.cutoff, c.order, c.multiplier_class, c.seed, c.gamma, c.delta, c.dt, c.eps_list
    );
    s.push_str("## Acceptance checks evaluated by this run\n\n| # | check | value | status |\n|---|---|---|---|\n");
    for r in &m.acceptance {
        let status = match r.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "not evaluated",
        };
        s.push_str(&format!("| {} | {} | {} | {} |\n", r.criterion, r.description, r.value, status));
    }
    s.push_str("\n## Stage values\n\n");
    for st in &m.stages {
        s.push_str(&format!("### {}\n\n", st.name));
        for (k, v) in &st.values {
            s.push_str(&format!("- {k}: {v:.6e}\n"));
        }
        s.push('\n');
    }
    s
}

fn read_csv(dir: &Path, name: &str) -> Result<Vec<Vec<f64>>> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|x| {
                    if x.trim().is_empty() {
                        Ok(f64::NAN)
                    } else {
                        x.trim().parse::<f64>().map_err(|_| Error::Parse(format!("{name}: {l}")))
                    }
                })
                .collect()
        })
        .collect()
}

/// Outcome of `emit_plots`.
#[derive(Debug, Clone, Default)]
pub struct PlotReport {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn line_plot(path: &Path, title: &str, xlabel: &str, ylabel: &str, pts: &[(f64, f64)], note: Option<String>) -> Result<()> {
    use plotters::prelude::*;
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let padx = ((x1 - x0) * 0.1).max(1e-3);
    let pady = ((y1 - y0) * 0.1).max(1e-3);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((x0 - padx)..(x1 + padx), (y0 - pady)..(y1 + pady))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(xlabel)
        .y_desc(ylabel)
        .draw()
        .map_err(plot_err)?;
    chart.draw_series(LineSeries::new(pts.iter().copied(), &BLUE)).map_err(plot_err)?;
    chart
        .draw_series(pts.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))
        .map_err(plot_err)?;
    if let Some(n) = note {
        root.draw(&Text::new(n, (90, 60), ("sans-serif", 18))).map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn histogram(path: &Path, title: &str, xlabel: &str, values: &[f64], bins: usize) -> Result<()> {
    use plotters::prelude::*;
    let vals: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
    let (lo, hi) = if vals.is_empty() { (0.0, 1.0) } else if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u32; bins];
    for v in &vals {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(1).max(1);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(lo..hi, 0u32..(top + top / 10 + 1))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(xlabel).y_desc("count").draw().map_err(plot_err)?;
    chart
        .draw_series(counts.iter().enumerate().map(|(i, &c)| {
            let x = lo + i as f64 * width;
            Rectangle::new([(x, 0), (x + width, c)], BLUE.mix(0.6).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Render SVG plots from the CSVs of a completed run into `<run>/plots/`.
pub fn emit_plots(run_dir: &Path) -> Result<PlotReport> {
    let manifest = RunManifest::load(run_dir)?;
    let out = run_dir.join("plots");
    std::fs::create_dir_all(&out)?;
    let mut rep = PlotReport::default();
    let has = |f: &str| manifest.files.iter().any(|x| x == f);

    if manifest.config.eps_list.is_empty() || !has("drift_vs_eps.csv") {
        let w = "empty ε-list: no drift plot".to_string();
        log::warn!("{w}");
        rep.warnings.push(w);
    } else {
        let rows = read_csv(run_dir, "drift_vs_eps.csv")?;
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r[0] > 0.0 && r[1] > 0.0)
            .map(|r| (r[0].log10(), r[1].log10()))
            .collect();
        let note = if has(SLOPE_FILE) {
            let text = std::fs::read_to_string(run_dir.join(SLOPE_FILE))?;
            let slope: f64 = text.trim().parse().map_err(|_| Error::Parse(format!("{SLOPE_FILE}: {text}")))?;
            Some(format!("fitted slope = {slope:.3}"))
        } else {
            None
        };
        let path = out.join("drift_vs_eps.svg");
        line_plot(&path, "action drift vs ε", "log10 ε", "log10 drift", &pts, note)?;
        rep.files.push(path);
    }

    if has("energy_vs_dt.csv") {
        let rows = read_csv(run_dir, "energy_vs_dt.csv")?;
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r[0] > 0.0 && r[1] > 0.0)
            .map(|r| (r[0].log10(), r[1].log10()))
            .collect();
        let path = out.join("energy_vs_dt.svg");
        line_plot(&path, "energy error vs dt", "log10 dt", "log10 max |H(t) − H(0)|", &pts, None)?;
        rep.files.push(path);
    }

    if has("overlap_ratios.csv") {
        let rows = read_csv(run_dir, "overlap_ratios.csv")?;
        let vals: Vec<f64> = rows.iter().filter(|r| r[4] > 0.0).map(|r| r[4].log10()).collect();
        let path = out.join("overlap_ratio_hist.svg");
        histogram(&path, "overlap decay ratio (k = 3, N = 1)", "log10 ratio", &vals, 40)?;
        rep.files.push(path);
    }

    if has("divisors.csv") {
        let rows = read_csv(run_dir, "divisors.csv")?;
        let vals: Vec<f64> = rows.iter().filter(|r| r[1] != 0.0).map(|r| r[1].abs().log10()).collect();
        let path = out.join("divisor_spectrum.svg");
        histogram(&path, "small-divisor spectrum", "log10 |Ω|", &vals, 50)?;
        rep.files.push(path);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::minimal("/tmp/x");
        assert!(c.validate().is_ok());
        c.order = 2;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let json = serde_json::to_string(&ExperimentConfig::minimal("/tmp/x")).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), ExperimentConfig::minimal("/tmp/x"));
        assert!(ExperimentConfig::from_json(&json.replace("\"order\":3", "\"order\":2")).is_err());
        assert!(ExperimentConfig::from_json(&json.replace("\"seed\"", "\"sede\"")).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::minimal("/tmp/x");
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output_dir = "/tmp/y".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn horizon() {
        assert_eq!(Horizon::Fixed(3.0).at(0.1), 3.0);
        assert!((Horizon::OverEps(10.0).at(0.05) - 200.0).abs() < 1e-12);
    }
}
