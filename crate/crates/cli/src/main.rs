use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qho_birkhoff::combinatorics::{verify_a_lemmas, LemmaScanConfig};
use qho_birkhoff::dynamics::{measure_action_drift, scaled_initial_state, EvolveOptions, Evolver, Scheme};
use qho_birkhoff::frequency::{scan_nonresonance, FrequencyVector};
use qho_birkhoff::harness::{emit_plots, run_pipeline, ExperimentConfig, Horizon};
use qho_birkhoff::hermite::{self, OverlapTable};
use qho_birkhoff::io::{fmt17, write_text};
use qho_birkhoff::nonlinearity::Nonlinearity;
use qho_birkhoff::normal_form::{birkhoff_iterate, NormalFormOptions};
use qho_birkhoff::poly::expand_nonlinearity;

#[derive(Parser)]
#[command(name = "qhonf", version, about = "Birkhoff normal forms for the semilinear quantum harmonic oscillator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Hermite overlap integrals: a single tuple or a full table
    Overlap(OverlapArgs),
    /// Small-divisor scan of a sampled frequency vector
    Resonance(ConfigArgs),
    /// Exhaustive and sampled checks of the A-function inequalities
    Verify {
        #[command(subcommand)]
        what: VerifyCmd,
    },
    /// Compute and persist a Birkhoff normal form
    Normalform(ConfigArgs),
    /// Integrate the Galerkin system for every ε
    Evolve {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// dump per-mode actions every N recorded samples
        #[arg(long)]
        action_stride: Option<usize>,
    },
    /// Run every stage and write a manifest
    Pipeline(ConfigArgs),
    /// Render SVG plots of a completed run
    Plots {
        /// run directory containing manifest.json
        run_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    Combinatorics {
        #[arg(long, default_value_t = 120)]
        exhaustive_bound: u64,
        #[arg(long, default_value_t = 120)]
        l_bound: u64,
        #[arg(long, default_value_t = 30)]
        pair_bound: u64,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// directory for report.md and report.csv; stdout if absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OverlapArgs {
    /// comma-separated 1-based indices, e.g. 1,1,1
    #[arg(long, conflicts_with = "arity")]
    indices: Option<String>,
    /// build the full table of this arity
    #[arg(long, requires = "cutoff")]
    arity: Option<usize>,
    #[arg(long)]
    cutoff: Option<usize>,
    /// table cache directory
    #[arg(long, env = hermite::CACHE_ENV)]
    cache_dir: Option<PathBuf>,
    /// write the table CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Strang,
    StrangRk4,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long = "class")]
    multiplier_class: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// use m = 0
    #[arg(long)]
    unperturbed: bool,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// `cubic`, `quartic:λ`, or a JSON list of {l, m, re, im} terms
    #[arg(long)]
    nonlinearity: Option<String>,
    #[arg(long, value_delimiter = ',')]
    s: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    dt: Option<f64>,
    /// fixed final time
    #[arg(long, conflicts_with = "horizon_over_eps")]
    t_final: Option<f64>,
    /// final time c/ε
    #[arg(long)]
    horizon_over_eps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    dt_study: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    record_stride: Option<usize>,
    #[arg(long)]
    decay_cutoff: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn parse_nonlinearity(s: &str) -> Result<Nonlinearity> {
    if s == "cubic" {
        return Ok(Nonlinearity::cubic());
    }
    if let Some(l) = s.strip_prefix("quartic:") {
        return Ok(Nonlinearity::quartic(l.parse().context("quartic coefficient")?));
    }
    let terms = serde_json::from_str(s).context("nonlinearity must be cubic, quartic:λ or JSON terms")?;
    Ok(Nonlinearity::new(terms)?)
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::minimal("run"),
        };
        macro_rules! set {
            ($($f:ident => $t:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$t = v; })* };
        }
        set!(cutoff => cutoff, order => order, multiplier_class => multiplier_class, seed => seed,
             gamma => gamma, delta => delta, s => s_list, eps => eps_list, dt => dt,
             dt_study => dt_study, record_stride => record_stride, decay_cutoff => decay_cutoff,
             output_dir => output_dir);
        if self.unperturbed {
            c.unperturbed = true;
        }
        if let Some(g) = &self.nonlinearity {
            c.nonlinearity = parse_nonlinearity(g)?;
        }
        if let Some(t) = self.t_final {
            c.horizon = Horizon::Fixed(t);
        }
        if let Some(k) = self.horizon_over_eps {
            c.horizon = Horizon::OverEps(k);
        }
        if let Some(s) = self.scheme {
            c.scheme = match s {
                SchemeArg::Strang => Scheme::Strang,
                SchemeArg::StrangRk4 => Scheme::StrangRk4,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

fn frequencies(c: &ExperimentConfig) -> FrequencyVector {
    if c.unperturbed {
        FrequencyVector::unperturbed(c.cutoff)
    } else {
        FrequencyVector::sampled(c.multiplier_class, c.cutoff, c.seed)
    }
}

fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            let p = dir.join(name);
            write_text(&p, text)?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn overlap_cmd(a: &OverlapArgs) -> Result<()> {
    if let Some(ix) = &a.indices {
        let idx: Vec<usize> = ix
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .context("indices must be positive integers")?;
        let cutoff = a.cutoff.unwrap_or_else(|| idx.iter().copied().max().unwrap_or(1));
        println!("{}", fmt17(hermite::overlap(&idx, cutoff)?));
        return Ok(());
    }
    let (Some(k), Some(j)) = (a.arity, a.cutoff) else {
        bail!("pass --indices or --arity with --cutoff");
    };
    let table = match &a.cache_dir {
        Some(dir) => OverlapTable::load_or_build(dir, k, j)?,
        None => OverlapTable::build(k, j)?,
    };
    match &a.out {
        Some(p) => {
            write_text(p, &table.to_csv())?;
            eprintln!("{} entries written to {}", table.entries.len(), p.display());
        }
        None => print!("{}", table.to_csv()),
    }
    Ok(())
}

fn resonance_cmd(c: &ExperimentConfig) -> Result<()> {
    let freq = frequencies(c);
    let rep = scan_nonresonance(&freq, c.order, c.cutoff, c.gamma, c.delta)?;
    write_text(&c.output_dir.join("violations.csv"), &rep.violations_csv())?;
    print!("{}", rep.summary_markdown());
    Ok(())
}

fn normalform_cmd(c: &ExperimentConfig) -> Result<()> {
    let freq = frequencies(c);
    let p = expand_nonlinearity(&c.nonlinearity, c.order, c.cutoff)?;
    let nf = birkhoff_iterate(&p, &freq, c.order, &NormalFormOptions::default())?;
    let meta = serde_json::json!({
        "seed": c.seed,
        "multiplier_class": c.multiplier_class,
        "gamma": c.gamma,
        "delta": c.delta,
    });
    let dir = c.output_dir.join("normal_form");
    nf.save(&dir, meta)?;
    for s in &nf.steps {
        println!(
            "degree {}: |chi| terms {}, homological residual {:.3e}, min divisor {:.3e}",
            s.degree, s.chi_terms, s.homological_residual, s.min_divisor
        );
    }
    println!("terminal residual {:.3e}; written to {}", nf.terminal_residual, dir.display());
    Ok(())
}

fn evolve_cmd(c: &ExperimentConfig, action_stride: Option<usize>) -> Result<()> {
    let freq = frequencies(c);
    let ev = Evolver::new(&freq, &c.nonlinearity)?;
    for (i, &eps) in c.eps_list.iter().enumerate() {
        let z0 = scaled_initial_state(&c.profile(), eps, c.s_list[0]);
        let opts = EvolveOptions {
            dt: c.dt,
            t_final: c.horizon.at(eps),
            record_stride: c.record_stride,
            s_list: c.s_list.clone(),
            scheme: c.scheme,
            blowup_factor: 2.0,
            keep_states: false,
        };
        let tr = ev.evolve(&z0, &opts)?;
        for (k, s) in c.s_list.iter().enumerate() {
            write_text(&c.output_dir.join(format!("trajectory_eps{i}_s{s}.csv")), &tr.to_csv(k))?;
        }
        if let Some(st) = action_stride {
            write_text(&c.output_dir.join(format!("actions_eps{i}.csv")), &tr.actions_csv(st))?;
        }
        println!(
            "eps {eps:e}: T = {}, action drift {:.3e}, energy error {:.3e}",
            opts.t_final,
            measure_action_drift(&tr, c.s_list[0])?,
            tr.energy_error()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Overlap(a) => overlap_cmd(&a)?,
        Cmd::Resonance(a) => resonance_cmd(&a.resolve()?)?,
        Cmd::Verify {
            what:
                VerifyCmd::Combinatorics {
                    exhaustive_bound,
                    l_bound,
                    pair_bound,
                    samples,
                    seed,
                    out,
                },
        } => {
            let cfg = LemmaScanConfig {
                exhaustive_bound,
                l_bound,
                pair_bound,
                samples,
                seed,
                ..LemmaScanConfig::default()
            };
            let rep = verify_a_lemmas(&cfg);
            emit(out.as_deref(), "report.md", &rep.to_markdown())?;
            if out.is_some() {
                emit(out.as_deref(), "report.csv", &rep.to_csv())?;
            }
        }
        Cmd::Normalform(a) => normalform_cmd(&a.resolve()?)?,
        Cmd::Evolve { cfg, action_stride } => evolve_cmd(&cfg.resolve()?, action_stride)?,
        Cmd::Pipeline(a) => {
            let c = a.resolve()?;
            let m = run_pipeline(&c)?;
            for r in &m.acceptance {
                let status = match r.pass {
                    Some(true) => "pass",
                    Some(false) => "FAIL",
                    None => "n/a",
                };
                println!("criterion {:>2}: {status:<4} {}  [{}]", r.criterion, r.description, r.value);
            }
            println!("manifest: {}", c.output_dir.join("manifest.json").display());
        }
        Cmd::Plots { run_dir } => {
            let rep = emit_plots(&run_dir)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            for f in &rep.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
