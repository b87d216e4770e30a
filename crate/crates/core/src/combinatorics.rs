//! Index statistics `μ, S, B, C, A` of signed multi-indices and empirical
//! scans of the inequalities they satisfy.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Statistics of a multi-index of arity ≥ 3, computed on absolute values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TupleStats {
    /// third largest `|j_i|`
    pub mu: u64,
    /// largest minus second largest
    pub s: u64,
    /// `sqrt(|j_{i2} j_{i3}|)`
    pub b: f64,
    /// largest `|j_i|`
    pub c: u64,
    /// `B / (B + S)`
    pub a: f64,
}

impl TupleStats {
    /// From the three largest absolute values, in non-increasing order.
    #[inline]
    pub fn from_top3(first: u64, second: u64, third: u64) -> Self {
        debug_assert!(first >= second && second >= third);
        let b = ((second * third) as f64).sqrt();
        let s = first - second;
        TupleStats {
            mu: third,
            s,
            b,
            c: first,
            a: b / (b + s as f64),
        }
    }
}

/// Three largest absolute values of a slice, non-increasing.
#[inline]
pub fn top3_abs<I: IntoIterator<Item = u64>>(values: I) -> (u64, u64, u64) {
    let (mut a, mut b, mut c) = (0, 0, 0);
    for v in values {
        if v > a {
            c = b;
            b = a;
            a = v;
        } else if v > b {
            c = b;
            b = v;
        } else if v > c {
            c = v;
        }
    }
    (a, b, c)
}

pub fn tuple_stats(indices: &[i64]) -> Result<TupleStats> {
    if indices.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "tuple statistics need arity ≥ 3, got {}",
            indices.len()
        )));
    }
    if indices.contains(&0) {
        return Err(Error::InvalidArgument("zero index in tuple".into()));
    }
    let (a, b, c) = top3_abs(indices.iter().map(|j| j.unsigned_abs()));
    Ok(TupleStats::from_top3(a, b, c))
}

/// `A` of the tuple `(j, l)` for a non-increasing positive `j`.
#[inline]
fn a_with(j: &[u64], l: u64) -> f64 {
    let (a, b, c) = top3_abs(j.iter().copied().chain(std::iter::once(l)));
    TupleStats::from_top3(a, b, c).a
}

#[inline]
fn mu_with(j: &[u64], l: u64) -> u64 {
    top3_abs(j.iter().copied().chain(std::iter::once(l))).2
}

/// Upper bound `Ã(j_1, j_2, l)` on `A(j, l)`, including its factor 2.
pub fn a_tilde(j1: u64, j2: u64, l: u64) -> f64 {
    let (j1f, j2f, lf) = (j1 as f64, j2 as f64, l as f64);
    if l <= j2 {
        2.0 * j2f / (lf + j1f - j2f)
    } else {
        let r = (lf * j2f).sqrt();
        2.0 * r / (r + (j1f - lf).abs())
    }
}

/// Scan ranges for the inequality checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaScanConfig {
    /// exhaustive bound on `|j_1|` for the `|l| A(j,l) ≤ 2|j_1|` and
    /// `A ≤ Ã` scans (arity-2 `j`, so `(j, l)` has arity 3)
    pub exhaustive_bound: u64,
    /// bound on `|l|` in those scans
    pub l_bound: u64,
    /// bound on `i_1, j_1` for the two-tuple inequalities
    pub pair_bound: u64,
    /// `|l|` ranges up to `l_factor · pair_bound` in the two-tuple scans
    pub l_factor: u64,
    /// random higher-arity samples
    pub samples: usize,
    pub max_sample_arity: usize,
    pub sample_index_bound: u64,
    pub seed: u64,
}

impl Default for LemmaScanConfig {
    fn default() -> Self {
        LemmaScanConfig {
            exhaustive_bound: 120,
            l_bound: 120,
            pair_bound: 30,
            l_factor: 4,
            samples: 200_000,
            max_sample_arity: 6,
            sample_index_bound: 400,
            seed: 7,
        }
    }
}

/// Empirical best constants of the four index inequalities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaReport {
    /// sup `|l| A(j,l) / |j_1|` (claimed ≤ 2)
    pub l_times_a: f64,
    pub l_times_a_argmax: Vec<u64>,
    /// sup `A(j,l) / (Ã(j_1,j_2,l)/2)` (claimed ≤ 2)
    pub a_over_tilde: f64,
    pub a_over_tilde_argmax: Vec<u64>,
    /// sup `A(j,l)² A(i,l)² / A(i,j)`
    pub product_bound: f64,
    pub product_argmax: Vec<u64>,
    /// sup `max(μ(j,l) A(i,l)², μ(i,l) A(j,l)²) / μ(i,j)²`
    pub mu_bound: f64,
    pub mu_argmax: Vec<u64>,
    /// the same two constants from the random higher-arity samples
    pub sampled_l_times_a: f64,
    pub sampled_a_over_tilde: f64,
    pub sampled_product_bound: f64,
    pub sampled_mu_bound: f64,
    pub tuples_checked: u64,
}

/// Exhaustive arity-3 scans plus random higher-arity sampling.
pub fn verify_a_lemmas(cfg: &LemmaScanConfig) -> LemmaReport {
    let mut checked = 0u64;

    // |l| A(j,l) ≤ 2|j_1| and A(j,l) ≤ Ã(j_1,j_2,l)
    let (mut la, mut la_arg) = (0.0_f64, vec![]);
    let (mut at, mut at_arg) = (0.0_f64, vec![]);
    for j1 in 1..=cfg.exhaustive_bound {
        for j2 in 1..=j1 {
            let j = [j1, j2];
            for l in 1..=cfg.l_bound {
                checked += 1;
                let a = a_with(&j, l);
                let r = l as f64 * a / j1 as f64;
                if r > la {
                    la = r;
                    la_arg = vec![j1, j2, l];
                }
                let t = 2.0 * a / a_tilde(j1, j2, l);
                if t > at {
                    at = t;
                    at_arg = vec![j1, j2, l];
                }
            }
        }
    }

    let (pb, pb_arg, mb, mb_arg, n) = pair_scan(cfg.pair_bound, cfg.l_factor * cfg.pair_bound);
    checked += n;

    // random higher arity, random signs (statistics only see |j|)
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (mut sla, mut sat, mut spb, mut smb) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let bound = cfg.sample_index_bound;
    let draw = |rng: &mut ChaCha20Rng, arity: usize| -> Vec<u64> {
        let mut v: Vec<u64> = (0..arity).map(|_| rng.gen_range(1..=bound)).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    };
    for _ in 0..cfg.samples {
        checked += 1;
        let k1 = rng.gen_range(2..=cfg.max_sample_arity.max(2));
        let k2 = rng.gen_range(2..=cfg.max_sample_arity.max(2));
        let j = draw(&mut rng, k1);
        let i = draw(&mut rng, k2);
        let l = rng.gen_range(1..=3 * bound);
        let ajl = a_with(&j, l);
        let ail = a_with(&i, l);
        sla = sla.max(l as f64 * ajl / j[0] as f64);
        sat = sat.max(2.0 * ajl / a_tilde(j[0], j[1], l));
        let (x, y, z) = top3_abs(i.iter().chain(&j).copied());
        let aij = TupleStats::from_top3(x, y, z);
        spb = spb.max(ajl * ajl * ail * ail / aij.a);
        let m = (mu_with(&j, l) as f64 * ail * ail).max(mu_with(&i, l) as f64 * ajl * ajl);
        smb = smb.max(m / (aij.mu * aij.mu) as f64);
    }

    LemmaReport {
        l_times_a: la,
        l_times_a_argmax: la_arg,
        a_over_tilde: at,
        a_over_tilde_argmax: at_arg,
        product_bound: pb,
        product_argmax: pb_arg,
        mu_bound: mb,
        mu_argmax: mb_arg,
        sampled_l_times_a: sla,
        sampled_a_over_tilde: sat,
        sampled_product_bound: spb,
        sampled_mu_bound: smb,
        tuples_checked: checked,
    }
}

/// Exhaustive scan of the two-tuple inequalities over ordered pairs
/// `i, j` with leading index ≤ `bound` and `1 ≤ l ≤ l_bound`.
///
/// Returns `(sup A(j,l)²A(i,l)²/A(i,j), argmax, sup μ-ratio, argmax, count)`.
pub fn pair_scan(bound: u64, l_bound: u64) -> (f64, Vec<u64>, f64, Vec<u64>, u64) {
    let pairs: Vec<[u64; 2]> = (1..=bound)
        .flat_map(|a| (1..=a).map(move |b| [a, b]))
        .collect();
    let nl = l_bound as usize;
    // A(p, l)² and μ(p, l) for every pair p and l
    let mut a2 = vec![0.0_f64; pairs.len() * nl];
    let mut mu = vec![0.0_f64; pairs.len() * nl];
    for (p, pair) in pairs.iter().enumerate() {
        for l in 1..=l_bound {
            let a = a_with(pair, l);
            a2[p * nl + (l as usize - 1)] = a * a;
            mu[p * nl + (l as usize - 1)] = mu_with(pair, l) as f64;
        }
    }
    let (mut pb, mut pb_arg, mut mb, mut mb_arg) = (0.0_f64, vec![], 0.0_f64, vec![]);
    let mut count = 0u64;
    // both inequalities are symmetric in (i, j)
    for (pi, i) in pairs.iter().enumerate() {
        let ai = &a2[pi * nl..(pi + 1) * nl];
        let mi = &mu[pi * nl..(pi + 1) * nl];
        for (pj, j) in pairs.iter().enumerate().take(pi + 1) {
            let aj = &a2[pj * nl..(pj + 1) * nl];
            let mj = &mu[pj * nl..(pj + 1) * nl];
            let (x, y, z) = top3_abs(i.iter().chain(j).copied());
            let aij = TupleStats::from_top3(x, y, z);
            let mu2 = (aij.mu * aij.mu) as f64;
            let mut best_p = 0.0_f64;
            let mut best_p_l = 0usize;
            let mut best_m = 0.0_f64;
            let mut best_m_l = 0usize;
            for l in 0..nl {
                let p = ai[l] * aj[l];
                if p > best_p {
                    best_p = p;
                    best_p_l = l;
                }
                let m = (mj[l] * ai[l]).max(mi[l] * aj[l]);
                if m > best_m {
                    best_m = m;
                    best_m_l = l;
                }
            }
            count += nl as u64;
            let rp = best_p / aij.a;
            if rp > pb {
                pb = rp;
                pb_arg = vec![i[0], i[1], j[0], j[1], best_p_l as u64 + 1];
            }
            let rm = best_m / mu2;
            if rm > mb {
                mb = rm;
                mb_arg = vec![i[0], i[1], j[0], j[1], best_m_l as u64 + 1];
            }
        }
    }
    (pb, pb_arg, mb, mb_arg, count)
}

impl LemmaReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| inequality | empirical constant | stated constant | argmax |\n");
        s.push_str("|---|---|---|---|\n");
        let row = |s: &mut String, name: &str, v: f64, stated: &str, arg: &[u64]| {
            s.push_str(&format!("| {name} | {v:.12} | {stated} | {arg:?} |\n"));
        };
        row(&mut s, "|l| A(j,l) / |j_1|", self.l_times_a, "2", &self.l_times_a_argmax);
        row(&mut s, "A(j,l) / (Ã/2)", self.a_over_tilde, "2", &self.a_over_tilde_argmax);
        row(&mut s, "A(j,l)² A(i,l)² / A(i,j)", self.product_bound, "unstated", &self.product_argmax);
        row(&mut s, "max(μ(j,l)A(i,l)², μ(i,l)A(j,l)²) / μ(i,j)²", self.mu_bound, "unstated", &self.mu_argmax);
        s.push_str(&format!(
            "\nrandom higher-arity samples: |l|A/|j_1| = {:.6}, A/(Ã/2) = {:.6}, product = {:.6}, μ-ratio = {:.6}\n",
            self.sampled_l_times_a, self.sampled_a_over_tilde, self.sampled_product_bound, self.sampled_mu_bound
        ));
        s.push_str(&format!("tuples checked: {}\n", self.tuples_checked));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("inequality,constant,stated\n");
        let f = crate::io::fmt17;
        s.push_str(&format!("l_times_a,{},2\n", f(self.l_times_a)));
        s.push_str(&format!("a_over_tilde,{},2\n", f(self.a_over_tilde)));
        s.push_str(&format!("product_bound,{},\n", f(self.product_bound)));
        s.push_str(&format!("mu_bound,{},\n", f(self.mu_bound)));
        s
    }
}
