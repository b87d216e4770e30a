//! Hermite functions of the harmonic oscillator `T = -d²/dx² + x²` and exact
//! overlap integrals of their products.
//!
//! Modes are 1-based: `φ_j` has eigenvalue `2j - 1`. Values come from the
//! three-term recurrence on L²-normalized functions, carried with a separate
//! logarithmic scale so nothing overflows or prematurely underflows even for
//! `j` in the tens of thousands.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Environment variable naming the on-disk overlap table cache.
pub const CACHE_ENV: &str = "QHO_BIRKHOFF_CACHE";
/// Bumped whenever the table file layout or the numerics behind it change.
pub const TABLE_FORMAT_VERSION: u32 = 1;
/// Default cap on the number of sorted tuples a table build may visit.
pub const DEFAULT_TUPLE_BUDGET: u128 = 20_000_000;

const RESCALE_HI: f64 = 1e150;
const LN_RESCALE_HI: f64 = 345.387_763_949_107; // ln(1e150)

/// `ln(π^{-1/4})`
fn ln_phi1_prefactor() -> f64 {
    -0.25 * PI.ln()
}

/// Runs the normalized recurrence at `x` and hands `(j, φ_j(x))` to `sink`
/// for `j = 1..=max_index`.
fn recurrence<F: FnMut(usize, f64)>(max_index: usize, x: f64, mut sink: F) {
    if max_index == 0 {
        return;
    }
    // mantissas with a shared log scale: φ = m · exp(log_scale)
    let mut log_scale = -0.5 * x * x + ln_phi1_prefactor();
    let mut prev = 0.0_f64;
    let mut cur = 1.0_f64;
    let emit = |m: f64, ls: f64| -> f64 {
        if m == 0.0 {
            0.0
        } else {
            m.signum() * (m.abs().ln() + ls).exp()
        }
    };
    sink(1, emit(cur, log_scale));
    for k in 1..max_index {
        // ψ_k = sqrt(2/k) x ψ_{k-1} - sqrt((k-1)/k) ψ_{k-2}, ψ_{k-1} = φ_k
        let kf = k as f64;
        let next = (2.0 / kf).sqrt() * x * cur - ((kf - 1.0) / kf).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_HI {
            cur /= RESCALE_HI;
            prev /= RESCALE_HI;
            log_scale += LN_RESCALE_HI;
        }
        sink(k + 1, emit(cur, log_scale));
    }
}

/// L²-orthonormal Hermite function `φ_j(x)`, `j ≥ 1`.
pub fn eval_phi(j: usize, x: f64) -> f64 {
    assert!(j >= 1, "Hermite modes are 1-based");
    let mut out = 0.0;
    recurrence(j, x, |k, v| {
        if k == j {
            out = v;
        }
    });
    out
}

/// `φ_1(x), …, φ_J(x)` in one recurrence sweep.
pub fn eval_phi_all(max_index: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_index);
    recurrence(max_index, x, |_, v| out.push(v));
    out
}

/// Values and first derivatives of `φ_1..φ_J` at `x`, using the ladder
/// relation `φ_j' = sqrt((j-1)/2) φ_{j-1} - sqrt(j/2) φ_{j+1}`.
pub fn eval_phi_with_derivative(max_index: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let vals = eval_phi_all(max_index + 1, x);
    let mut der = Vec::with_capacity(max_index);
    for j in 1..=max_index {
        let jf = j as f64;
        let lower = if j >= 2 {
            ((jf - 1.0) / 2.0).sqrt() * vals[j - 2]
        } else {
            0.0
        };
        der.push(lower - (jf / 2.0).sqrt() * vals[j]);
    }
    let mut vals = vals;
    vals.truncate(max_index);
    (vals, der)
}

/// Gauss–Hermite rule for the weight `e^{-x²}`.
///
/// `scaled_weights[i] = weights[i] · e^{x_i²}` stays O(n^{-1/2}) for every
/// node, so integrands that already carry their Gaussian factor (products of
/// Hermite functions) are integrated without underflow.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scaled_weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut scaled = vec![0.0; n];
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut phi_n = 0.0;
            for _ in 0..100 {
                // f = φ_{n+1}, f' = sqrt(2n) φ_n - z φ_{n+1}
                let (a, b) = last_two(n + 1, z);
                phi_n = a;
                let step = b / ((2.0 * nf).sqrt() * a - z * b);
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let (a, _) = last_two(n + 1, z);
            if a != 0.0 {
                phi_n = a;
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            let w = 1.0 / (nf * phi_n * phi_n);
            scaled[i] = w;
            scaled[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        // ascending order
        nodes.reverse();
        scaled.reverse();
        let weights = nodes
            .iter()
            .zip(&scaled)
            .map(|(x, w)| w * (-x * x).exp())
            .collect();
        GaussHermite {
            nodes,
            weights,
            scaled_weights: scaled,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Shared, lazily built rule with `n` nodes.
    pub fn cached(n: usize) -> Arc<GaussHermite> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(rule) = cache.lock().unwrap().get(&n) {
            return rule.clone();
        }
        let rule = Arc::new(GaussHermite::new(n));
        cache.lock().unwrap().insert(n, rule.clone());
        rule
    }
}

/// `(φ_{m-1}(x), φ_m(x))`
fn last_two(m: usize, x: f64) -> (f64, f64) {
    let mut a = 0.0;
    let mut b = 0.0;
    recurrence(m, x, |k, v| {
        if k + 1 == m {
            a = v;
        } else if k == m {
            b = v;
        }
    });
    (a, b)
}

/// Number of Gauss–Hermite nodes that integrates a product of Hermite
/// functions with total polynomial degree `degree` exactly.
pub fn exact_node_count(degree: usize) -> usize {
    degree.div_ceil(2) + 1
}

/// Truncated Hermite basis `φ_1..φ_J` with its normalization constants.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    max_index: usize,
    normalization: Vec<f64>,
}

impl HermiteBasis {
    pub fn new(max_index: usize) -> Result<Self> {
        if max_index == 0 {
            return Err(Error::InvalidArgument("basis needs at least one mode".into()));
        }
        // φ_{n+1} = H_n e^{-x²/2} / sqrt(2^n n! sqrt(π)); log form avoids overflow.
        let normalization = (0..max_index)
            .map(|n| {
                let nf = n as f64;
                let ln_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
                (-0.5 * (nf * 2f64.ln() + ln_fact + 0.5 * PI.ln())).exp()
            })
            .collect();
        Ok(HermiteBasis {
            max_index,
            normalization,
        })
    }

    pub fn max_index(&self) -> usize {
        self.max_index
    }

    /// `1/sqrt(2^n n! sqrt(π))` for mode `j = n + 1`; underflows to zero for
    /// very large `j`, which is why evaluation never goes through `H_n`.
    pub fn normalization_constant(&self, j: usize) -> f64 {
        self.normalization[j - 1]
    }

    pub fn eval(&self, j: usize, x: f64) -> f64 {
        eval_phi(j, x)
    }

    /// Gram matrix `∫ φ_i φ_j dx` for `i, j ≤ J`, by exact quadrature.
    pub fn gram_matrix(&self) -> Vec<Vec<f64>> {
        let big_j = self.max_index;
        let rule = GaussHermite::cached(big_j);
        let table: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| eval_phi_all(big_j, x)).collect();
        let mut gram = vec![vec![0.0; big_j]; big_j];
        for (row, w) in table.iter().zip(&rule.scaled_weights) {
            for i in 0..big_j {
                let wi = w * row[i];
                for j in i..big_j {
                    gram[i][j] += wi * row[j];
                }
            }
        }
        for i in 0..big_j {
            for j in 0..i {
                gram[i][j] = gram[j][i];
            }
        }
        gram
    }

    /// Largest `|∫ φ_i φ_j − δ_ij|` over the basis.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.gram_matrix();
        let mut worst = 0.0_f64;
        for (i, row) in gram.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// Rayleigh quotients `⟨φ_j, T φ_j⟩ = ∫ (φ_j')² + x² φ_j²` for every mode.
    pub fn rayleigh_quotients(&self) -> Vec<f64> {
        let big_j = self.max_index;
        let rule = GaussHermite::cached(big_j + 2);
        let mut out = vec![0.0; big_j];
        for (&x, &w) in rule.nodes.iter().zip(&rule.scaled_weights) {
            let (v, d) = eval_phi_with_derivative(big_j, x);
            for j in 0..big_j {
                out[j] += w * (d[j] * d[j] + x * x * v[j] * v[j]);
            }
        }
        out
    }
}

/// `max_x |φ_j(x)|`. The maximum sits on the last hump before the turning
/// point `x = sqrt(2j - 1)`; a fine scan of that region is refined by golden
/// section.
pub fn sup_norm(j: usize) -> f64 {
    let turning = (2.0 * j as f64 - 1.0).sqrt();
    let lo = if j < 8 { 0.0 } else { 0.5 * turning };
    let hi = turning + 3.0;
    let h = (0.02 / (1.0 + turning).sqrt()).min(0.01);
    let steps = ((hi - lo) / h).ceil() as usize;
    let mut best_x = lo;
    let mut best = 0.0_f64;
    for s in 0..=steps {
        let x = lo + s as f64 * h;
        let v = eval_phi(j, x).abs();
        if v > best {
            best = v;
            best_x = x;
        }
    }
    // golden-section refinement on |φ_j| around the best sample
    let (mut a, mut b) = ((best_x - h).max(0.0), best_x + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if eval_phi(j, c).abs() > eval_phi(j, d).abs() {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(eval_phi(j, 0.5 * (a + b)).abs())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Fitted exponent of `max_x |φ_j|` against `j` over log-spaced samples.
pub fn sup_norm_exponent(j_min: usize, j_max: usize, samples: usize) -> (Vec<(usize, f64)>, f64) {
    let mut js: Vec<usize> = (0..samples)
        .map(|s| {
            let t = s as f64 / (samples - 1) as f64;
            ((j_min as f64).ln() * (1.0 - t) + (j_max as f64).ln() * t).exp().round() as usize
        })
        .collect();
    js.dedup();
    let data: Vec<(usize, f64)> = js.iter().map(|&j| (j, sup_norm(j))).collect();
    let xs: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
    let ys: Vec<f64> = data.iter().map(|d| d.1).collect();
    let slope = loglog_slope(&xs, &ys);
    (data, slope)
}

/// `∫ φ_{j_1} ⋯ φ_{j_k} dx` with an explicit node count.
///
/// The integrand is a polynomial times `e^{-k x²/2}`; substituting
/// `x = y sqrt(2/k)` turns it into a polynomial times `e^{-y²}`.
pub fn overlap_with_nodes(indices: &[usize], n_nodes: usize) -> f64 {
    let k = indices.len();
    let scale = (2.0 / k as f64).sqrt();
    let rule = GaussHermite::cached(n_nodes);
    let jmax = *indices.iter().max().unwrap();
    let mut acc = 0.0;
    for (&y, &w) in rule.nodes.iter().zip(&rule.scaled_weights) {
        let vals = eval_phi_all(jmax, y * scale);
        let prod: f64 = indices.iter().map(|&j| vals[j - 1]).product();
        acc += w * prod;
    }
    scale * acc
}

/// Exact overlap `a_j = ∫ Π φ_{j_i} dx` for indices in `1..=cutoff`.
pub fn overlap(indices: &[usize], cutoff: usize) -> Result<f64> {
    if indices.len() < 2 {
        return Err(Error::InvalidArgument("overlap needs at least two modes".into()));
    }
    for &j in indices {
        if j == 0 || j > cutoff {
            return Err(Error::TableRange { index: j, cutoff });
        }
    }
    let degree: usize = indices.iter().map(|j| j - 1).sum();
    if degree % 2 == 1 {
        return Ok(0.0);
    }
    Ok(overlap_with_nodes(indices, exact_node_count(degree)))
}

pub type TupleKey = SmallVec<[u16; 8]>;

/// Table values on a scaled Gauss–Hermite grid shared by every tuple of a
/// given arity and cutoff.
struct OverlapGrid {
    /// `phi[j-1][i] = φ_j(y_i sqrt(2/k))`
    phi: Vec<Vec<f64>>,
    weights: Vec<f64>,
    scale: f64,
}

impl OverlapGrid {
    fn new(arity: usize, cutoff: usize) -> Self {
        let n = exact_node_count(arity * (cutoff - 1));
        let rule = GaussHermite::cached(n);
        let scale = (2.0 / arity as f64).sqrt();
        let mut phi = vec![vec![0.0; n]; cutoff];
        for (i, &y) in rule.nodes.iter().enumerate() {
            for (j, v) in eval_phi_all(cutoff, y * scale).into_iter().enumerate() {
                phi[j][i] = v;
            }
        }
        OverlapGrid {
            phi,
            weights: rule.scaled_weights.clone(),
            scale,
        }
    }
}

/// Visits every non-increasing tuple `j_1 ≥ … ≥ j_k` with `j_1 ≤ cutoff` and
/// even total degree, together with its overlap.
pub fn for_each_overlap<F: FnMut(&[usize], f64)>(arity: usize, cutoff: usize, mut visit: F) {
    walk_overlaps::<_, false>(arity, cutoff, |t, a, _| visit(t, a));
}

/// Like [`for_each_overlap`], also passing the rounding-noise level
/// `4 ε Σ_i |w_i Π φ(y_i)|` of each quadrature sum.
pub fn for_each_overlap_with_noise<F: FnMut(&[usize], f64, f64)>(arity: usize, cutoff: usize, visit: F) {
    walk_overlaps::<_, true>(arity, cutoff, visit);
}

fn walk_overlaps<F: FnMut(&[usize], f64, f64), const NOISE: bool>(arity: usize, cutoff: usize, mut visit: F) {
    assert!(arity >= 2 && cutoff >= 1);
    let grid = OverlapGrid::new(arity, cutoff);
    let n = grid.weights.len();
    let mut tuple = vec![0usize; arity];
    // prefix products: level l holds w_i Π_{m<l} φ_{j_m}(y_i)
    let mut prefix = vec![vec![0.0; n]; arity];
    prefix[0].clone_from(&grid.weights);
    fn recurse<F: FnMut(&[usize], f64, f64), const NOISE: bool>(
        level: usize,
        upper: usize,
        parity: usize,
        grid: &OverlapGrid,
        tuple: &mut Vec<usize>,
        prefix: &mut Vec<Vec<f64>>,
        visit: &mut F,
    ) {
        let arity = tuple.len();
        if level == arity - 1 {
            for j in 1..=upper {
                if (parity + j - 1) % 2 == 1 {
                    continue;
                }
                tuple[level] = j;
                let row = &grid.phi[j - 1];
                let dot: f64 = prefix[level].iter().zip(row).map(|(a, b)| a * b).sum();
                let noise = if NOISE {
                    let abs: f64 = prefix[level].iter().zip(row).map(|(a, b)| (a * b).abs()).sum();
                    4.0 * f64::EPSILON * grid.scale * abs
                } else {
                    0.0
                };
                visit(tuple, grid.scale * dot, noise);
            }
            return;
        }
        for j in 1..=upper {
            tuple[level] = j;
            let (head, tail) = prefix.split_at_mut(level + 1);
            let src = &head[level];
            let row = &grid.phi[j - 1];
            for ((d, s), r) in tail[0].iter_mut().zip(src).zip(row) {
                *d = s * r;
            }
            recurse::<F, NOISE>(level + 1, j, parity + j - 1, grid, tuple, prefix, visit);
        }
    }
    recurse::<F, NOISE>(0, cutoff, 0, &grid, &mut tuple, &mut prefix, &mut visit);
}

/// Number of non-increasing `k`-tuples over `1..=J`: `C(J + k - 1, k)`.
pub fn sorted_tuple_count(arity: usize, cutoff: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..arity as u128 {
        c = c * (cutoff as u128 + i) / (i + 1);
    }
    c
}

/// Non-zero overlaps of a fixed arity, keyed by the index tuple sorted
/// non-increasingly. Values indistinguishable from quadrature rounding
/// noise are treated as zero and omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapTable {
    pub arity: usize,
    pub cutoff: usize,
    pub entries: BTreeMap<TupleKey, f64>,
}

impl OverlapTable {
    pub fn build(arity: usize, cutoff: usize) -> Result<Self> {
        Self::build_with_budget(arity, cutoff, DEFAULT_TUPLE_BUDGET)
    }

    pub fn build_with_budget(arity: usize, cutoff: usize, budget: u128) -> Result<Self> {
        if arity < 2 {
            return Err(Error::InvalidArgument("table arity must be at least 2".into()));
        }
        if cutoff == 0 {
            return Err(Error::InvalidArgument("table cutoff must be at least 1".into()));
        }
        let needed = sorted_tuple_count(arity, cutoff);
        if needed > budget {
            return Err(Error::Budget {
                what: "overlap table tuples",
                needed,
                budget,
            });
        }
        let mut entries = BTreeMap::new();
        for_each_overlap_with_noise(arity, cutoff, |t, a, noise| {
            if a.abs() > noise {
                entries.insert(t.iter().map(|&j| j as u16).collect(), a);
            }
        });
        Ok(OverlapTable {
            arity,
            cutoff,
            entries,
        })
    }

    /// Looks up `a_j` for indices in any order; parity-zero and absent tuples
    /// give `0`.
    pub fn get(&self, indices: &[usize]) -> Result<f64> {
        if indices.len() != self.arity {
            return Err(Error::InvalidArgument(format!(
                "table has arity {}, got {} indices",
                self.arity,
                indices.len()
            )));
        }
        let mut key: TupleKey = SmallVec::with_capacity(indices.len());
        for &j in indices {
            if j == 0 || j > self.cutoff {
                return Err(Error::TableRange {
                    index: j,
                    cutoff: self.cutoff,
                });
            }
            key.push(j as u16);
        }
        key.sort_unstable_by(|a, b| b.cmp(a));
        Ok(self.entries.get(&key).copied().unwrap_or(0.0))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV with a `# k,J,version` header line and rows `j_1,…,j_k,a`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# k={},J={},version={}", self.arity, self.cutoff, TABLE_FORMAT_VERSION);
        let cols: Vec<String> = (1..=self.arity).map(|i| format!("j{i}")).collect();
        let _ = writeln!(s, "{},a", cols.join(","));
        for (key, a) in &self.entries {
            for j in key {
                let _ = write!(s, "{j},");
            }
            let _ = writeln!(s, "{}", crate::io::fmt17(*a));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty overlap table".into()))?;
        let mut arity = None;
        let mut cutoff = None;
        let mut version = None;
        for field in header.trim_start_matches('#').trim().split(',') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field {field:?}")))?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad header value {v:?}")))?;
            match k.trim() {
                "k" => arity = Some(v),
                "J" => cutoff = Some(v),
                "version" => version = Some(v),
                other => return Err(Error::Parse(format!("unknown header key {other:?}"))),
            }
        }
        let (arity, cutoff) = match (arity, cutoff, version) {
            (Some(k), Some(j), Some(v)) if v == TABLE_FORMAT_VERSION as usize => (k, j),
            (_, _, Some(v)) => return Err(Error::Parse(format!("unsupported table version {v}"))),
            _ => return Err(Error::Parse("incomplete table header".into())),
        };
        lines.next(); // column names
        let mut entries = BTreeMap::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != arity + 1 {
                return Err(Error::Parse(format!("bad row {line:?}")));
            }
            let key: TupleKey = parts[..arity]
                .iter()
                .map(|p| p.trim().parse::<u16>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(e.to_string()))?;
            let a: f64 = parts[arity]
                .trim()
                .parse()
                .map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?;
            entries.insert(key, a);
        }
        Ok(OverlapTable {
            arity,
            cutoff,
            entries,
        })
    }

    pub fn cache_file_name(arity: usize, cutoff: usize) -> String {
        format!("overlap_k{arity}_J{cutoff}_v{TABLE_FORMAT_VERSION}.csv")
    }

    /// Loads the table from `dir` if a matching file exists, otherwise
    /// builds and stores it.
    pub fn load_or_build(dir: &Path, arity: usize, cutoff: usize) -> Result<Self> {
        let path = dir.join(Self::cache_file_name(arity, cutoff));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(table) = Self::from_csv(&text) {
                if table.arity == arity && table.cutoff == cutoff {
                    return Ok(table);
                }
            }
        }
        let table = Self::build(arity, cutoff)?;
        std::fs::create_dir_all(dir)?;
        std::fs::write(&path, table.to_csv())?;
        Ok(table)
    }
}

/// Cache directory from the environment, if configured.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

/// Ordered-tuple statistics used by the decay estimate: `(μ, C, A)` for a
/// non-increasing positive tuple.
pub(crate) fn ordered_stats(t: &[usize]) -> (f64, f64, f64) {
    let (j1, j2, j3) = (t[0] as f64, t[1] as f64, t[2] as f64);
    let b = (j2 * j3).sqrt();
    (j3, j1, b / (b + j1 - j2))
}

/// Empirical constants `c_N` in `|a_j| ≤ c_N μ(j)^ν A(j)^N / C(j)^β`.
#[derive(Debug, Clone)]
pub struct DecayReport {
    pub arity: usize,
    pub nu: f64,
    pub beta: f64,
    pub n_list: Vec<u32>,
    /// `(cutoff, c_N per entry of n_list)`, one row per requested cutoff.
    pub constants: Vec<(usize, Vec<f64>)>,
    /// Tuples attaining the sup at the largest cutoff.
    pub argmax: Vec<Vec<usize>>,
}

impl DecayReport {
    pub fn at_cutoff(&self, cutoff: usize) -> Option<&[f64]> {
        self.constants
            .iter()
            .find(|(c, _)| *c == cutoff)
            .map(|(_, v)| v.as_slice())
    }
}

/// Scans every ordered tuple with `j_1 ≤ max(cutoffs)` and records the sup of
/// `|a_j| C(j)^β / (μ(j)^ν A(j)^N)` restricted to each cutoff.
pub fn overlap_decay(arity: usize, cutoffs: &[usize], nu: f64, beta: f64, n_list: &[u32]) -> DecayReport {
    assert!(arity >= 3, "decay statistics need at least three modes");
    let top = *cutoffs.iter().max().unwrap();
    let mut sups = vec![vec![0.0_f64; n_list.len()]; cutoffs.len()];
    let mut argmax = vec![Vec::new(); n_list.len()];
    for_each_overlap(arity, top, |t, a| {
        let (mu, c, big_a) = ordered_stats(t);
        let base = a.abs() * c.powf(beta) / mu.powf(nu);
        for (n_idx, &n) in n_list.iter().enumerate() {
            let ratio = base / big_a.powi(n as i32);
            for (c_idx, &cut) in cutoffs.iter().enumerate() {
                if t[0] <= cut && ratio > sups[c_idx][n_idx] {
                    sups[c_idx][n_idx] = ratio;
                    if cut == top {
                        argmax[n_idx] = t.to_vec();
                    }
                }
            }
        }
    });
    DecayReport {
        arity,
        nu,
        beta,
        n_list: n_list.to_vec(),
        constants: cutoffs.iter().copied().zip(sups).collect(),
        argmax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn phi_closed_forms() {
        assert_relative_eq!(eval_phi(1, 0.0), PI.powf(-0.25), max_relative = 1e-15);
        assert_eq!(eval_phi(2, 0.0), 0.0);
        let x: f64 = 0.7;
        let phi2 = 2f64.sqrt() * x * PI.powf(-0.25) * (-x * x / 2.0).exp();
        assert_relative_eq!(eval_phi(2, x), phi2, max_relative = 1e-14);
    }

    #[test]
    fn no_overflow_at_large_index() {
        for &x in &[0.0, 1.0, 50.0, 140.0, 142.0, 200.0] {
            let v = eval_phi(10_000, x);
            assert!(v.is_finite(), "x = {x}: {v}");
            assert!(v.abs() < 1.0);
        }
        assert!(eval_phi(10_000, 100.0).abs() > 1e-6);
    }

    #[test]
    fn phi3_is_normalized() {
        let rule = GaussHermite::new(10);
        let norm: f64 = rule
            .nodes
            .iter()
            .zip(&rule.scaled_weights)
            .map(|(&x, &w)| w * eval_phi(3, x).powi(2))
            .sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_moments() {
        let rule = GaussHermite::new(12);
        let m0: f64 = rule.weights.iter().sum();
        let m2: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x * x).sum();
        let m4: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert_relative_eq!(m0, PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(m2, PI.sqrt() / 2.0, max_relative = 1e-14);
        assert_relative_eq!(m4, 3.0 * PI.sqrt() / 4.0, max_relative = 1e-13);
    }

    #[test]
    fn overlap_examples() {
        assert_relative_eq!(overlap(&[1, 1], 5).unwrap(), 1.0, max_relative = 1e-14);
        assert_eq!(overlap(&[1, 1, 2], 5).unwrap(), 0.0);
        let expected = (2.0f64 / 3.0).sqrt() * PI.powf(-0.25);
        assert_relative_eq!(overlap(&[1, 1, 1], 5).unwrap(), expected, max_relative = 1e-14);
        assert!(matches!(overlap(&[1, 6], 5), Err(Error::TableRange { index: 6, .. })));
    }

    #[test]
    fn overlap_node_doubling_invariance() {
        for t in [[7usize, 5, 3, 1], [12, 12, 9, 3], [20, 1, 1, 2]] {
            let degree: usize = t.iter().map(|j| j - 1).sum();
            if degree % 2 == 1 {
                continue;
            }
            let n = exact_node_count(degree);
            let a = overlap_with_nodes(&t, n);
            let b = overlap_with_nodes(&t, 2 * n);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{t:?}: {a} vs {b}");
        }
    }

    #[test]
    fn table_examples() {
        let t = OverlapTable::build(2, 3).unwrap();
        assert_eq!(t.len(), 3);
        for j in 1..=3 {
            assert_relative_eq!(t.get(&[j, j]).unwrap(), 1.0, max_relative = 1e-13);
        }
        let t3 = OverlapTable::build(3, 2).unwrap();
        let expected3 = (2.0f64 / 3.0).sqrt() * PI.powf(-0.25);
        assert_relative_eq!(t3.get(&[1, 1, 1]).unwrap(), expected3, max_relative = 1e-14);
        assert!(!t3.entries.contains_key(&TupleKey::from_slice(&[2, 1, 1])));
        let t4 = OverlapTable::build(4, 1).unwrap();
        assert_eq!(t4.len(), 1);
        let expected = (PI / 2.0).sqrt() / PI;
        assert_relative_eq!(t4.get(&[1, 1, 1, 1]).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn table_budget_guard() {
        let err = OverlapTable::build_with_budget(4, 50, 1000).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }

    #[test]
    fn table_matches_direct_overlap() {
        let table = OverlapTable::build(3, 9).unwrap();
        for (key, a) in &table.entries {
            let idx: Vec<usize> = key.iter().map(|&j| j as usize).collect();
            let direct = overlap(&idx, 9).unwrap();
            assert!((a - direct).abs() < 1e-14, "{idx:?}");
        }
    }

    #[test]
    fn table_csv_round_trip() {
        let table = OverlapTable::build(3, 6).unwrap();
        let back = OverlapTable::from_csv(&table.to_csv()).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn rayleigh_small_modes() {
        let basis = HermiteBasis::new(10).unwrap();
        for (j, q) in basis.rayleigh_quotients().iter().enumerate() {
            assert!((q - (2 * j + 1) as f64).abs() < 1e-11);
        }
    }

    #[test]
    fn normalization_constants() {
        let basis = HermiteBasis::new(4).unwrap();
        // φ_3 = H_2 e^{-x²/2} / sqrt(8 sqrt π), H_2(0) = -2
        assert_relative_eq!(
            basis.eval(3, 0.0),
            -2.0 * basis.normalization_constant(3),
            max_relative = 1e-14
        );
    }
}
