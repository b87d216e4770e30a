//! Detuned frequencies `ω_j = 2j − 1 + m̃_j / j^k` and small-divisor scans.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{top3_abs, TupleStats};
use crate::error::{Error, Result};

/// Divisors below this magnitude (with `plus ≠ minus`) count as numerically zero.
pub const NEAR_ZERO: f64 = 1e-12;

/// Default cap on the number of divisors a scan may enumerate.
pub const DEFAULT_SCAN_BUDGET: u128 = 200_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSample {
    pub class_index: u32,
    pub seed: u64,
    /// `m̃_1, …, m̃_J`
    pub values: Vec<f64>,
}

/// Uniform value in `[0, 1)` attached to counter `j` of stream `seed`.
#[cfg(test)]
fn counter_uniform(seed: u64, stream: u64, j: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * j as u128);
    rng.gen::<f64>()
}

/// Derive an independent 64-bit seed from `(seed, counter)`.
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng.set_word_pos(2 * counter as u128);
    rng.next_u64()
}

/// Draw `m̃_1..m̃_J` i.i.d. uniform on `[−1/2, 1/2)`; `m̃_j` depends only on `(seed, j)`.
pub fn sample_multiplier(k: u32, cutoff: usize, seed: u64) -> MultiplierSample {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let values = (0..cutoff)
        .map(|j| {
            rng.set_word_pos(2 * j as u128);
            rng.gen::<f64>() - 0.5
        })
        .collect();
    MultiplierSample {
        class_index: k,
        seed,
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Unperturbed,
    Sampled(MultiplierSample),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    /// `ω_1, …, ω_J`
    pub omega: Vec<f64>,
    pub provenance: Provenance,
}

impl FrequencyVector {
    /// `ω_j = 2j − 1`.
    pub fn unperturbed(cutoff: usize) -> Self {
        FrequencyVector {
            omega: (1..=cutoff).map(|j| (2 * j - 1) as f64).collect(),
            provenance: Provenance::Unperturbed,
        }
    }

    pub fn from_sample(sample: &MultiplierSample) -> Self {
        let k = sample.class_index as i32;
        let omega = sample
            .values
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let j = (i + 1) as f64;
                (2 * i + 1) as f64 + m / j.powi(k)
            })
            .collect();
        FrequencyVector {
            omega,
            provenance: Provenance::Sampled(sample.clone()),
        }
    }

    pub fn sampled(k: u32, cutoff: usize, seed: u64) -> Self {
        Self::from_sample(&sample_multiplier(k, cutoff, seed))
    }

    pub fn cutoff(&self) -> usize {
        self.omega.len()
    }

    /// `ω_j` for a 1-based mode index.
    #[inline]
    pub fn get(&self, j: usize) -> f64 {
        self.omega[j - 1]
    }

    /// Multiplier value `m_j = ω_j − (2j − 1)`.
    pub fn multiplier(&self, j: usize) -> f64 {
        self.omega[j - 1] - (2 * j - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divisor {
    pub omega: f64,
    /// `plus` and `minus` are the same multiset
    pub structural: bool,
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

/// `Ω = Σ_{plus} ω − Σ_{minus} ω`.
pub fn small_divisor(freq: &FrequencyVector, plus: &[usize], minus: &[usize]) -> Divisor {
    let (p, m) = (sorted(plus), sorted(minus));
    if p == m {
        return Divisor {
            omega: 0.0,
            structural: true,
        };
    }
    let sp: f64 = p.iter().map(|&j| freq.get(j)).sum();
    let sm: f64 = m.iter().map(|&j| freq.get(j)).sum();
    Divisor {
        omega: sp - sm,
        structural: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisorRecord {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    pub omega: f64,
    pub s: u64,
    pub mu: u64,
    pub violation: bool,
}

impl DivisorRecord {
    pub fn arity(&self) -> usize {
        self.plus.len() + self.minus.len()
    }

    /// `|Ω| μ^δ / (1 + S)`, the largest `γ` this divisor admits.
    pub fn ratio(&self, delta: f64) -> f64 {
        self.omega.abs() * (self.mu as f64).powf(delta) / (1.0 + self.s as f64)
    }

    /// Indices as signed integers, minus side negative, space separated.
    pub fn indices_field(&self) -> String {
        self.plus
            .iter()
            .map(|j| j.to_string())
            .chain(self.minus.iter().map(|j| format!("-{j}")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub r: usize,
    pub cutoff: usize,
    pub gamma: f64,
    pub delta: f64,
    pub checked: u64,
    /// divisors with `|Ω| < γ(1+S)/μ^δ`
    pub violations: Vec<DivisorRecord>,
    /// non-structural divisors with `|Ω| < NEAR_ZERO`
    pub zero_divisors: Vec<DivisorRecord>,
    /// `min |Ω| μ^δ / (1+S)` over all non-structural tuples
    pub admissible_gamma: f64,
    pub argmin: Option<DivisorRecord>,
}

impl ScanReport {
    pub fn violations_csv(&self) -> String {
        let mut s = String::from("arity,split,indices,omega,S,mu\n");
        for v in &self.violations {
            s.push_str(&format!(
                "{},{}+{},{},{},{},{}\n",
                v.arity(),
                v.plus.len(),
                v.minus.len(),
                v.indices_field(),
                crate::io::fmt17(v.omega),
                v.s,
                v.mu
            ));
        }
        s
    }

    pub fn summary_markdown(&self) -> String {
        let mut s = format!(
            "| r | J | γ | δ | divisors checked | violations | numerical zeros | admissible γ |\n|---|---|---|---|---|---|---|---|\n| {} | {} | {:e} | {} | {} | {} | {} | {:.6e} |\n",
            self.r,
            self.cutoff,
            self.gamma,
            self.delta,
            self.checked,
            self.violations.len(),
            self.zero_divisors.len(),
            self.admissible_gamma
        );
        if let Some(a) = &self.argmin {
            s.push_str(&format!(
                "\nsmallest ratio at `{}` with Ω = {:.6e}\n",
                a.indices_field(),
                a.omega
            ));
        }
        s
    }
}

/// Nondecreasing multisets of size `n` from `1..=cutoff`, with their frequency sums.
fn multisets(freq: &FrequencyVector, n: usize, cutoff: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    if n == 0 {
        out.push((Vec::new(), 0.0));
        return out;
    }
    let mut cur = vec![1usize; n];
    loop {
        let sum = cur.iter().map(|&j| freq.get(j)).sum();
        out.push((cur.clone(), sum));
        let Some(pos) = (0..n).rev().find(|&i| cur[i] < cutoff) else {
            break;
        };
        let v = cur[pos] + 1;
        for c in &mut cur[pos..] {
            *c = v;
        }
    }
    out
}

fn binom(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of divisors `scan_nonresonance` visits.
pub fn scan_size(r: usize, cutoff: usize) -> u128 {
    let j = cutoff as u128;
    let mut total = 0u128;
    for arity in 3..=r {
        for q in 0..=arity / 2 {
            let p = arity - q;
            let a = binom(j + p as u128 - 1, p as u128);
            let b = binom(j + q as u128 - 1, q as u128);
            total += if p == q { a * (a - 1) / 2 } else { a * b };
        }
    }
    total
}

/// Enumerate every divisor of arity `3..=r` within the cutoff and
/// report those violating `|Ω| ≥ γ(1+S)/μ^δ`.
///
/// Splits `(p, q)` and `(q, p)` give opposite divisors, so only `p ≥ q`
/// is visited; for `p = q` each unordered pair is visited once.
pub fn scan_nonresonance(
    freq: &FrequencyVector,
    r: usize,
    cutoff: usize,
    gamma: f64,
    delta: f64,
) -> Result<ScanReport> {
    scan_nonresonance_with_budget(freq, r, cutoff, gamma, delta, DEFAULT_SCAN_BUDGET)
}

pub fn scan_nonresonance_with_budget(
    freq: &FrequencyVector,
    r: usize,
    cutoff: usize,
    gamma: f64,
    delta: f64,
    budget: u128,
) -> Result<ScanReport> {
    if r < 3 {
        return Err(Error::InvalidArgument(format!("scan needs r ≥ 3, got {r}")));
    }
    if cutoff > freq.cutoff() || cutoff == 0 {
        return Err(Error::TableRange {
            index: cutoff,
            cutoff: freq.cutoff(),
        });
    }
    let needed = scan_size(r, cutoff);
    if needed > budget {
        return Err(Error::Budget {
            what: "resonance scan",
            needed,
            budget,
        });
    }
    let mu_pow: Vec<f64> = (0..=cutoff).map(|m| (m as f64).powf(delta)).collect();
    let mut report = ScanReport {
        r,
        cutoff,
        gamma,
        delta,
        checked: 0,
        violations: Vec::new(),
        zero_divisors: Vec::new(),
        admissible_gamma: f64::INFINITY,
        argmin: None,
    };
    let mut best = f64::INFINITY;
    for_each_divisor(freq, r, cutoff, |plus, minus, omega, st| {
        report.checked += 1;
        let ratio = omega.abs() * mu_pow[st.mu as usize] / (1.0 + st.s as f64);
        let near_zero = omega.abs() < NEAR_ZERO;
        let violation = ratio < gamma;
        let record = || DivisorRecord {
            plus: plus.to_vec(),
            minus: minus.to_vec(),
            omega,
            s: st.s,
            mu: st.mu,
            violation,
        };
        if near_zero {
            report.zero_divisors.push(record());
        }
        if violation {
            report.violations.push(record());
        }
        if ratio < best {
            best = ratio;
            report.argmin = Some(record());
        }
    });
    report.admissible_gamma = best;
    Ok(report)
}

/// Visit every divisor of arity `3..=r` within the cutoff once, as
/// `(plus, minus, Ω, stats)` with `|plus| ≥ |minus|`.
pub fn for_each_divisor<F: FnMut(&[usize], &[usize], f64, TupleStats)>(
    freq: &FrequencyVector,
    r: usize,
    cutoff: usize,
    mut visit: F,
) {
    let sets: Vec<Vec<(Vec<usize>, f64)>> = (0..=r).map(|n| multisets(freq, n, cutoff)).collect();
    for arity in 3..=r {
        for q in 0..=arity / 2 {
            let p = arity - q;
            for (ia, (pa, sa)) in sets[p].iter().enumerate() {
                let skip = if p == q { ia + 1 } else { 0 };
                for (mb, sb) in sets[q].iter().skip(skip) {
                    let (x, y, z) = top3_abs(pa.iter().chain(mb).map(|&j| j as u64));
                    visit(pa, mb, sa - sb, TupleStats::from_top3(x, y, z));
                }
            }
        }
    }
}

/// Wilson score interval for `successes / n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub gamma: f64,
    pub n_samples: u64,
    pub violating: u64,
    pub probability: f64,
    /// 95% Wilson interval
    pub wilson_low: f64,
    pub wilson_high: f64,
}

/// Admissible `γ` of each of `n_samples` multiplier draws, sample `i`
/// seeded by `derive_seed(seed, i)`.
pub fn admissible_gammas(
    k: u32,
    r: usize,
    cutoff: usize,
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..n_samples)
        .map(|i| {
            let freq = FrequencyVector::sampled(k, cutoff, derive_seed(seed, i as u64));
            scan_nonresonance(&freq, r, cutoff, 0.0, delta).map(|s| s.admissible_gamma)
        })
        .collect()
}

fn estimate_from(gammas: &[f64], gamma: f64) -> MeasureEstimate {
    let n = gammas.len() as u64;
    let violating = gammas.iter().filter(|&&g| g < gamma).count() as u64;
    let (lo, hi) = wilson_interval(violating, n, 1.959_963_984_540_054);
    MeasureEstimate {
        gamma,
        n_samples: n,
        violating,
        probability: if n == 0 { 0.0 } else { violating as f64 / n as f64 },
        wilson_low: lo,
        wilson_high: hi,
    }
}

/// Monte-Carlo probability that a random multiplier has at least one
/// divisor violating the `(γ, δ)` bound up to arity `r` and cutoff `J`.
pub fn estimate_resonant_measure(
    k: u32,
    r: usize,
    cutoff: usize,
    delta: f64,
    gamma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MeasureEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be ≥ 1".into()));
    }
    let g = admissible_gammas(k, r, cutoff, delta, n_samples, seed)?;
    Ok(estimate_from(&g, gamma))
}

/// Same estimate for several `γ` values from one set of samples.
pub fn estimate_resonant_curve(
    k: u32,
    r: usize,
    cutoff: usize,
    delta: f64,
    gammas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<MeasureEstimate>> {
    let g = admissible_gammas(k, r, cutoff, delta, n_samples, seed)?;
    Ok(gammas.iter().map(|&gm| estimate_from(&g, gm)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sampling_is_deterministic_and_counter_based() {
        let a = sample_multiplier(1, 50, 11);
        let b = sample_multiplier(1, 50, 11);
        assert_eq!(a, b);
        let short = sample_multiplier(1, 10, 11);
        assert_eq!(short.values[..], a.values[..10]);
        assert_ne!(sample_multiplier(1, 10, 12).values, short.values);
        for (j, v) in a.values.iter().enumerate() {
            assert_eq!(*v, counter_uniform(11, 0, j as u64) - 0.5);
        }
    }

    #[test]
    fn sample_mean_is_centred() {
        let n = 100_000;
        let s = sample_multiplier(1, n, 3);
        assert!(s.values.iter().all(|v| (-0.5..=0.5).contains(v)));
        let mean = s.values.iter().sum::<f64>() / n as f64;
        let sigma = (1.0f64 / 12.0).sqrt();
        assert!(mean.abs() <= 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn multiplier_bound() {
        for k in 1..4 {
            let f = FrequencyVector::sampled(k, 200, 5);
            for j in 1..=200 {
                assert!(f.multiplier(j).abs() <= 0.5 / (j as f64).powi(k as i32) + 1e-15);
                if j > 1 {
                    assert!(f.get(j) > f.get(j - 1));
                }
            }
        }
    }

    #[test]
    fn divisor_examples() {
        let f = FrequencyVector::unperturbed(10);
        assert_eq!(small_divisor(&f, &[1, 2], &[3]).omega, -1.0);
        let d = small_divisor(&f, &[1, 3], &[2, 2]);
        assert_eq!(d.omega, 0.0);
        assert!(!d.structural);
        let d = small_divisor(&f, &[4, 7], &[7, 4]);
        assert_eq!(d.omega, 0.0);
        assert!(d.structural);
    }

    #[test]
    fn unperturbed_scan_finds_resonance() {
        let f = FrequencyVector::unperturbed(10);
        let rep = scan_nonresonance(&f, 4, 10, 1e-3, 4.0).unwrap();
        assert!(rep
            .zero_divisors
            .iter()
            .any(|d| d.plus == vec![1, 3] && d.minus == vec![2, 2]));
        assert_eq!(rep.admissible_gamma, 0.0);
        assert!(rep.violations_csv().lines().count() > 1);
    }

    #[test]
    fn generic_sample_is_nonresonant() {
        let f = FrequencyVector::sampled(1, 20, 2024);
        let rep = scan_nonresonance(&f, 3, 20, 0.0, 4.0).unwrap();
        assert!(rep.admissible_gamma > 0.0);
        assert!(rep.zero_divisors.is_empty());
        assert!(rep.violations.is_empty());
        assert_eq!(rep.checked as u128, scan_size(3, 20));
    }

    #[test]
    fn admissible_gamma_monotone_in_cutoff() {
        let f = FrequencyVector::sampled(1, 16, 9);
        let mut prev = f64::INFINITY;
        for j in 2..=16 {
            let g = scan_nonresonance(&f, 4, j, 0.0, 4.0).unwrap().admissible_gamma;
            assert!(g <= prev);
            prev = g;
        }
    }

    #[test]
    fn scan_matches_brute_force() {
        let f = FrequencyVector::sampled(1, 6, 1);
        let rep = scan_nonresonance(&f, 4, 6, 0.0, 2.0).unwrap();
        // independent enumeration over ordered sign assignments
        let mut best = f64::INFINITY;
        for arity in 3..=4usize {
            let total = 6usize.pow(arity as u32);
            for code in 0..total {
                let mut idx = vec![];
                let mut c = code;
                for _ in 0..arity {
                    idx.push(c % 6 + 1);
                    c /= 6;
                }
                for signs in 0..(1u32 << arity) {
                    let (mut p, mut m) = (vec![], vec![]);
                    for (b, &j) in idx.iter().enumerate() {
                        if signs >> b & 1 == 1 { p.push(j) } else { m.push(j) }
                    }
                    let d = small_divisor(&f, &p, &m);
                    if d.structural {
                        continue;
                    }
                    let st = crate::combinatorics::tuple_stats(
                        &idx.iter().map(|&j| j as i64).collect::<Vec<_>>(),
                    )
                    .unwrap();
                    best = best.min(d.omega.abs() * (st.mu as f64).powi(2) / (1.0 + st.s as f64));
                }
            }
        }
        assert!((best - rep.admissible_gamma).abs() <= 1e-15 * best.max(1.0));
    }

    #[test]
    fn budget_guard() {
        let f = FrequencyVector::unperturbed(50);
        assert!(matches!(
            scan_nonresonance_with_budget(&f, 5, 50, 0.0, 1.0, 1000),
            Err(Error::Budget { .. })
        ));
        assert!(scan_nonresonance(&f, 2, 5, 0.0, 1.0).is_err());
    }

    #[test]
    fn measure_estimate_properties() {
        let zero = estimate_resonant_measure(1, 3, 8, 4.0, 0.0, 50, 1).unwrap();
        assert_eq!(zero.violating, 0);
        let curve = estimate_resonant_curve(1, 3, 8, 4.0, &[1e-1, 1e-2, 1e-3, 1e-4], 200, 1).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].probability <= w[0].probability);
        }
        for e in &curve {
            assert!(e.wilson_low <= e.probability && e.probability <= e.wilson_high);
        }
    }

    #[test]
    fn wilson_reference_values() {
        // 0 of 100 at 95%: upper bound z²/(n+z²)
        let (lo, hi) = wilson_interval(0, 100, 1.959_963_984_540_054);
        assert_eq!(lo, 0.0);
        let z2 = 1.959_963_984_540_054f64.powi(2);
        assert!((hi - z2 / (100.0 + z2)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn divisor_properties(
            plus in proptest::collection::vec(1usize..30, 1..4),
            minus in proptest::collection::vec(1usize..30, 1..4),
            seed in 0u64..1000,
        ) {
            let f = FrequencyVector::sampled(1, 30, seed);
            let f0 = FrequencyVector::unperturbed(30);
            let d = small_divisor(&f, &plus, &minus);
            let e = small_divisor(&f, &minus, &plus);
            prop_assert_eq!(d.omega, -e.omega);
            let d0 = small_divisor(&f0, &plus, &minus).omega;
            prop_assert_eq!(d0.fract(), 0.0);
            let parity = (plus.len() + minus.len()) % 2;
            prop_assert_eq!((d0.abs() as u64 % 2) as usize, parity);
            if d0 != 0.0 { prop_assert!(d0.abs() >= 1.0); }
            let bound: f64 = plus.iter().chain(&minus).map(|&j| 0.5 / j as f64).sum();
            if !d.structural {
                prop_assert!((d.omega - d0).abs() <= bound + 1e-12);
            }
        }
    }
}
