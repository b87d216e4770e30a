//! Sparse polynomials in the mode variables `ξ_j, η_j` and their Poisson algebra.
//!
//! Bracket convention:
//! `{F, G} = i Σ_j (∂F/∂ξ_j ∂G/∂η_j − ∂F/∂η_j ∂G/∂ξ_j)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{BuildHasherDefault, DefaultHasher};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::combinatorics::{top3_abs, TupleStats};
use crate::error::{Error, Result};
use crate::frequency::FrequencyVector;
use crate::hermite::{cache_dir_from_env, OverlapTable};
use crate::nonlinearity::Nonlinearity;
use crate::state::StateVector;

pub type C64 = Complex64;
type Indices = SmallVec<[u16; 6]>;
type DetMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

pub const POLY_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_DROP_TOL: f64 = 1e-16;
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// `Π ξ_{xi} Π η_{eta}` with both index lists sorted ascending.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Monomial {
    xi: Indices,
    eta: Indices,
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.xi.cmp(&other.xi))
            .then_with(|| self.eta.cmp(&other.eta))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Remove one occurrence of `skip` (if given) from sorted `a`, merge with sorted `b`
/// minus one occurrence of `skip_b`.
fn merge_skip(a: &[u16], skip_a: Option<u16>, b: &[u16], skip_b: Option<u16>) -> Indices {
    let mut out = Indices::with_capacity(a.len() + b.len());
    let (mut sa, mut sb) = (skip_a, skip_b);
    let mut ia = a.iter().copied().filter(move |&x| {
        if Some(x) == sa {
            sa = None;
            false
        } else {
            true
        }
    });
    let mut ib = b.iter().copied().filter(move |&x| {
        if Some(x) == sb {
            sb = None;
            false
        } else {
            true
        }
    });
    let (mut x, mut y) = (ia.next(), ib.next());
    loop {
        match (x, y) {
            (Some(p), Some(q)) => {
                if p <= q {
                    out.push(p);
                    x = ia.next();
                } else {
                    out.push(q);
                    y = ib.next();
                }
            }
            (Some(p), None) => {
                out.push(p);
                x = ia.next();
            }
            (None, Some(q)) => {
                out.push(q);
                y = ib.next();
            }
            (None, None) => break,
        }
    }
    out
}

/// `(index, multiplicity)` runs of a sorted list.
fn runs(v: &[u16]) -> SmallVec<[(u16, u32); 6]> {
    let mut out: SmallVec<[(u16, u32); 6]> = SmallVec::new();
    for &x in v {
        match out.last_mut() {
            Some((y, c)) if *y == x => *c += 1,
            _ => out.push((x, 1)),
        }
    }
    out
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl Monomial {
    pub fn new(xi: &[usize], eta: &[usize]) -> Result<Self> {
        let conv = |v: &[usize]| -> Result<Indices> {
            let mut out: Indices = v
                .iter()
                .map(|&j| {
                    if j == 0 || j > u16::MAX as usize {
                        Err(Error::InvalidArgument(format!("mode index {j} out of range")))
                    } else {
                        Ok(j as u16)
                    }
                })
                .collect::<Result<_>>()?;
            out.sort_unstable();
            Ok(out)
        };
        Ok(Monomial {
            xi: conv(xi)?,
            eta: conv(eta)?,
        })
    }

    /// From signed indices: positive for `ξ`, negative for `η`.
    pub fn from_signed(indices: &[i64]) -> Result<Self> {
        let mut xi = vec![];
        let mut eta = vec![];
        for &j in indices {
            match j {
                0 => return Err(Error::InvalidArgument("zero index in monomial".into())),
                j if j > 0 => xi.push(j as usize),
                j => eta.push((-j) as usize),
            }
        }
        Self::new(&xi, &eta)
    }

    /// `ξ_j η_j`.
    pub fn action(j: usize) -> Self {
        Self::new(&[j], &[j]).expect("valid index")
    }

    pub fn xi(&self) -> impl Iterator<Item = usize> + '_ {
        self.xi.iter().map(|&j| j as usize)
    }

    pub fn eta(&self) -> impl Iterator<Item = usize> + '_ {
        self.eta.iter().map(|&j| j as usize)
    }

    pub fn degree(&self) -> usize {
        self.xi.len() + self.eta.len()
    }

    pub fn max_index(&self) -> usize {
        self.xi.iter().chain(&self.eta).copied().max().unwrap_or(0) as usize
    }

    /// Canonical signed tuple: `ξ` indices ascending, then `−η` indices by ascending `|·|`.
    pub fn signed(&self) -> Vec<i64> {
        self.xi
            .iter()
            .map(|&j| j as i64)
            .chain(self.eta.iter().map(|&j| -(j as i64)))
            .collect()
    }

    /// The `ξ` multiset equals the `η` multiset: a function of the actions.
    pub fn is_action_type(&self) -> bool {
        self.xi == self.eta
    }

    /// `ξ ↔ η`, the monomial paired with this one by complex conjugation.
    pub fn conjugate(&self) -> Self {
        Monomial {
            xi: self.eta.clone(),
            eta: self.xi.clone(),
        }
    }

    pub fn multiply(&self, other: &Monomial) -> Monomial {
        Monomial {
            xi: merge_skip(&self.xi, None, &other.xi, None),
            eta: merge_skip(&self.eta, None, &other.eta, None),
        }
    }

    /// `Ω = Σ_{ξ} ω − Σ_{η} ω`.
    pub fn omega(&self, freq: &FrequencyVector) -> f64 {
        let p: f64 = self.xi().map(|j| freq.get(j)).sum();
        let m: f64 = self.eta().map(|j| freq.get(j)).sum();
        p - m
    }

    /// Number of distinct orderings of the signed index tuple.
    pub fn orderings(&self) -> f64 {
        let d = self.degree() as u32;
        let denom: f64 = runs(&self.xi)
            .iter()
            .chain(runs(&self.eta).iter())
            .map(|&(_, c)| factorial(c))
            .product();
        factorial(d) / denom
    }

    pub fn stats(&self) -> Option<TupleStats> {
        if self.degree() < 3 {
            return None;
        }
        let (a, b, c) = top3_abs(self.xi.iter().chain(&self.eta).map(|&j| j as u64));
        Some(TupleStats::from_top3(a, b, c))
    }

    pub fn eval(&self, z: &StateVector) -> C64 {
        let mut p = C64::new(1.0, 0.0);
        for j in self.xi() {
            p *= z.xi[j - 1];
        }
        for j in self.eta() {
            p *= z.eta[j - 1];
        }
        p
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.signed().iter().map(|j| j.to_string()).collect();
        write!(f, "{}", s.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeMonomial {
    pub monomial: Monomial,
    pub coeff: C64,
}

/// `{H_0, c·ξ^{(j)}η^{(l)}} = −iΩ(j,l) c·ξ^{(j)}η^{(l)}`.
pub fn bracket_with_h0(freq: &FrequencyVector, mon: &ModeMonomial) -> ModeMonomial {
    if mon.monomial.is_action_type() {
        return ModeMonomial {
            monomial: mon.monomial.clone(),
            coeff: C64::new(0.0, 0.0),
        };
    }
    let omega = mon.monomial.omega(freq);
    ModeMonomial {
        monomial: mon.monomial.clone(),
        coeff: -I * omega * mon.coeff,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsePolynomial {
    pub cutoff: usize,
    terms: BTreeMap<Monomial, C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealityCertificate {
    /// `max |conj(a_{jl}) − a_{lj}|`
    pub mismatch: f64,
    /// `max |a|`, for relative comparisons
    pub scale: f64,
}

impl RealityCertificate {
    pub fn is_real(&self, tol: f64) -> bool {
        self.mismatch <= tol * self.scale.max(f64::MIN_POSITIVE)
    }
}

/// Per-`N` constants of the coefficient bound `μ^ν A^N / C^β` and its
/// variant with the additional `1/(1+S)` factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDiagnostic {
    pub nu: f64,
    pub beta: f64,
    pub n_list: Vec<u32>,
    pub c: Vec<f64>,
    pub c_plus: Vec<f64>,
}

impl SparsePolynomial {
    pub fn zero(cutoff: usize) -> Self {
        SparsePolynomial {
            cutoff,
            terms: BTreeMap::new(),
        }
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, C64)>>(cutoff: usize, terms: I) -> Result<Self> {
        let mut p = Self::zero(cutoff);
        for (m, c) in terms {
            p.add_term(m, c)?;
        }
        p.prune_exact();
        Ok(p)
    }

    /// `H_0 = Σ ω_j ξ_j η_j` truncated at the frequency vector's cutoff.
    pub fn h0(freq: &FrequencyVector) -> Self {
        let mut p = Self::zero(freq.cutoff());
        for j in 1..=freq.cutoff() {
            p.terms.insert(Monomial::action(j), C64::new(freq.get(j), 0.0));
        }
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: C64) -> Result<()> {
        if m.max_index() > self.cutoff {
            return Err(Error::TableRange {
                index: m.max_index(),
                cutoff: self.cutoff,
            });
        }
        *self.terms.entry(m).or_insert(C64::new(0.0, 0.0)) += c;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Monomial, &C64)> {
        self.terms.iter()
    }

    pub fn get(&self, m: &Monomial) -> C64 {
        self.terms.get(m).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn degree_bounds(&self) -> Option<(usize, usize)> {
        let min = self.terms.keys().next()?.degree();
        let max = self.terms.keys().next_back()?.degree();
        Some((min, max))
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    fn prune_exact(&mut self) {
        self.terms.retain(|_, c| c.re != 0.0 || c.im != 0.0);
    }

    /// Drop coefficients with `|a| ≤ tol · max|a|`.
    pub fn prune(&mut self, tol: f64) {
        let floor = tol * self.max_abs();
        self.terms.retain(|_, c| c.norm() > floor && (c.re != 0.0 || c.im != 0.0));
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut p = self.clone();
        for v in p.terms.values_mut() {
            *v *= c;
        }
        p.prune_exact();
        p
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// `self + c·other`, exact cancellations removed.
    pub fn axpy(&self, c: C64, other: &Self) -> Result<Self> {
        check_cutoff(self, other)?;
        let mut p = self.clone();
        for (m, v) in &other.terms {
            *p.terms.entry(m.clone()).or_insert(C64::new(0.0, 0.0)) += c * v;
        }
        p.prune_exact();
        Ok(p)
    }

    pub fn homogeneous_part(&self, degree: usize) -> Self {
        self.filter(|m| m.degree() == degree)
    }

    pub fn filter<F: Fn(&Monomial) -> bool>(&self, keep: F) -> Self {
        SparsePolynomial {
            cutoff: self.cutoff,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| keep(m))
                .map(|(m, c)| (m.clone(), *c))
                .collect(),
        }
    }

    /// Split at `max_degree`: the kept polynomial and the `ℓ¹` mass of the dropped part.
    pub fn truncate(&self, max_degree: usize) -> (Self, f64) {
        let tail: f64 = self
            .terms
            .iter()
            .filter(|(m, _)| m.degree() > max_degree)
            .map(|(_, c)| c.norm())
            .sum();
        (self.filter(|m| m.degree() <= max_degree), tail)
    }

    /// Largest coefficient on a monomial that is not a function of the actions.
    pub fn max_non_action(&self) -> f64 {
        self.terms
            .iter()
            .filter(|(m, _)| !m.is_action_type())
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn reality_certificate(&self) -> RealityCertificate {
        let mut mismatch = 0.0_f64;
        for (m, c) in &self.terms {
            let partner = self.get(&m.conjugate());
            mismatch = mismatch.max((c.conj() - partner).norm());
        }
        RealityCertificate {
            mismatch,
            scale: self.max_abs(),
        }
    }

    /// Largest coefficient distance to `other`.
    pub fn max_diff(&self, other: &Self) -> f64 {
        let mut d = 0.0_f64;
        for (m, c) in &self.terms {
            d = d.max((c - other.get(m)).norm());
        }
        for (m, c) in &other.terms {
            if !self.terms.contains_key(m) {
                d = d.max(c.norm());
            }
        }
        d
    }

    pub fn evaluate(&self, z: &StateVector) -> C64 {
        self.terms.iter().map(|(m, c)| c * m.eval(z)).sum()
    }

    /// `(∂P/∂ξ_j, ∂P/∂η_j)` at `z`.
    pub fn gradient(&self, z: &StateVector) -> (Vec<C64>, Vec<C64>) {
        let n = z.cutoff();
        let mut dxi = vec![C64::new(0.0, 0.0); n];
        let mut deta = vec![C64::new(0.0, 0.0); n];
        let mut vals: SmallVec<[C64; 12]> = SmallVec::new();
        for (m, c) in &self.terms {
            vals.clear();
            vals.extend(m.xi().map(|j| z.xi[j - 1]));
            let nx = vals.len();
            vals.extend(m.eta().map(|j| z.eta[j - 1]));
            let d = vals.len();
            // product of all factors except position k, via prefix/suffix products
            let mut prefix: SmallVec<[C64; 12]> = SmallVec::with_capacity(d + 1);
            prefix.push(C64::new(1.0, 0.0));
            for k in 0..d {
                let p = prefix[k] * vals[k];
                prefix.push(p);
            }
            let mut suffix = C64::new(1.0, 0.0);
            for k in (0..d).rev() {
                let without = prefix[k] * suffix;
                if k < nx {
                    dxi[m.xi[k] as usize - 1] += c * without;
                } else {
                    deta[m.eta[k - nx] as usize - 1] += c * without;
                }
                suffix *= vals[k];
            }
        }
        (dxi, deta)
    }

    /// Hamiltonian field components `(−∂P/∂ξ, +∂P/∂η)` at `z`.
    pub fn vector_field_apply(&self, z: &StateVector) -> StateVector {
        let (dxi, deta) = self.gradient(z);
        StateVector {
            xi: dxi.into_iter().map(|v| -v).collect(),
            eta: deta,
        }
    }

    /// Generator of the flow along which `d/dt (F∘Φ^t) = {F, P}∘Φ^t`:
    /// `ξ̇ = i ∂P/∂η`, `η̇ = −i ∂P/∂ξ`.
    pub fn lie_flow_field(&self, z: &StateVector) -> StateVector {
        let (dxi, deta) = self.gradient(z);
        StateVector {
            xi: deta.into_iter().map(|v| I * v).collect(),
            eta: dxi.into_iter().map(|v| -I * v).collect(),
        }
    }

    /// Sup over monomials of degree ≥ 3 of `|a^sym| C^β / (μ^ν A^N)`, where
    /// `a^sym` is the coefficient divided by the number of orderings of its
    /// index tuple; the `+` variant multiplies by `(1 + S)`.
    pub fn class_diagnostic(&self, nu: f64, beta: f64, n_list: &[u32]) -> ClassDiagnostic {
        let mut c = vec![0.0_f64; n_list.len()];
        let mut c_plus = vec![0.0_f64; n_list.len()];
        for (m, a) in &self.terms {
            let Some(st) = m.stats() else { continue };
            let sym = a.norm() / m.orderings();
            let base = sym * (st.c as f64).powf(beta) / (st.mu as f64).powf(nu);
            for (k, &n) in n_list.iter().enumerate() {
                let r = base / st.a.powi(n as i32);
                c[k] = c[k].max(r);
                c_plus[k] = c_plus[k].max(r * (1.0 + st.s as f64));
            }
        }
        ClassDiagnostic {
            nu,
            beta,
            n_list: n_list.to_vec(),
            c,
            c_plus,
        }
    }

    /// Serialized as `indices;re;im` rows in canonical order.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# version={POLY_FORMAT_VERSION},cutoff={}\nindices;re;im\n",
            self.cutoff
        );
        for (m, c) in &self.terms {
            s.push_str(&format!(
                "{};{};{}\n",
                m,
                crate::io::fmt17(c.re),
                crate::io::fmt17(c.im)
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty polynomial file".into()))?;
        let mut cutoff = None;
        let mut version = None;
        for kv in header.trim_start_matches('#').trim().split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field {kv}")))?;
            let v: usize = v.trim().parse().map_err(|_| Error::Parse(format!("bad header value {kv}")))?;
            match k.trim() {
                "cutoff" => cutoff = Some(v),
                "version" => version = Some(v),
                _ => {}
            }
        }
        if version != Some(POLY_FORMAT_VERSION as usize) {
            return Err(Error::Parse(format!("unsupported polynomial format {version:?}")));
        }
        let cutoff = cutoff.ok_or_else(|| Error::Parse("missing cutoff".into()))?;
        if lines.next().map(str::trim) != Some("indices;re;im") {
            return Err(Error::Parse("missing column header".into()));
        }
        let mut p = Self::zero(cutoff);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(';').collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("bad row {line}")));
            }
            let idx: Vec<i64> = f[0]
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad index in {line}"))))
                .collect::<Result<_>>()?;
            let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number in {line}")));
            p.add_term(Monomial::from_signed(&idx)?, C64::new(num(f[1])?, num(f[2])?))?;
        }
        Ok(p)
    }

    /// JSON object `{version, cutoff, terms: ["indices;re;im", …]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| format!("{};{};{}", m, crate::io::fmt17(c.re), crate::io::fmt17(c.im)))
            .collect();
        serde_json::json!({
            "version": POLY_FORMAT_VERSION,
            "cutoff": self.cutoff,
            "terms": rows,
        })
    }
}

fn check_cutoff(a: &SparsePolynomial, b: &SparsePolynomial) -> Result<()> {
    if a.cutoff != b.cutoff {
        return Err(Error::CutoffMismatch {
            left: a.cutoff,
            right: b.cutoff,
        });
    }
    Ok(())
}

/// Terms of `G` containing `ξ_j` / `η_j`, with multiplicity.
struct VarIndex {
    xi: Vec<Vec<(u32, u32)>>,
    eta: Vec<Vec<(u32, u32)>>,
}

impl VarIndex {
    fn new(terms: &[(&Monomial, &C64)], cutoff: usize) -> Self {
        let mut xi = vec![Vec::new(); cutoff + 1];
        let mut eta = vec![Vec::new(); cutoff + 1];
        for (t, (m, _)) in terms.iter().enumerate() {
            for (j, c) in runs(&m.xi) {
                xi[j as usize].push((t as u32, c));
            }
            for (j, c) in runs(&m.eta) {
                eta[j as usize].push((t as u32, c));
            }
        }
        VarIndex { xi, eta }
    }
}

const BRACKET_CHUNK: usize = 64;

/// `{F, G}` restricted to degree ≤ `max_degree`, with the `ℓ¹` mass of the
/// dropped contributions. Chunking is fixed, so results do not depend on
/// the thread count.
pub fn poisson_bracket_truncated(
    f: &SparsePolynomial,
    g: &SparsePolynomial,
    max_degree: usize,
) -> Result<(SparsePolynomial, f64)> {
    check_cutoff(f, g)?;
    let ft: Vec<(&Monomial, &C64)> = f.terms.iter().collect();
    let gt: Vec<(&Monomial, &C64)> = g.terms.iter().collect();
    let gidx = VarIndex::new(&gt, g.cutoff);

    let partials: Vec<(DetMap<Monomial, C64>, f64)> = ft
        .par_chunks(BRACKET_CHUNK)
        .map(|chunk| {
            let mut acc: DetMap<Monomial, C64> = DetMap::default();
            let mut tail = 0.0;
            for &(mf, a) in chunk {
                for (j, p) in runs(&mf.xi) {
                    for &(t, q) in &gidx.eta[j as usize] {
                        let (mg, b) = gt[t as usize];
                        let c = I * (a * b) * (p * q) as f64;
                        if mf.degree() + mg.degree() - 2 > max_degree {
                            tail += c.norm();
                            continue;
                        }
                        let m = Monomial {
                            xi: merge_skip(&mf.xi, Some(j), &mg.xi, None),
                            eta: merge_skip(&mf.eta, None, &mg.eta, Some(j)),
                        };
                        *acc.entry(m).or_insert(C64::new(0.0, 0.0)) += c;
                    }
                }
                for (j, p) in runs(&mf.eta) {
                    for &(t, q) in &gidx.xi[j as usize] {
                        let (mg, b) = gt[t as usize];
                        let c = -I * (a * b) * (p * q) as f64;
                        if mf.degree() + mg.degree() - 2 > max_degree {
                            tail += c.norm();
                            continue;
                        }
                        let m = Monomial {
                            xi: merge_skip(&mf.xi, None, &mg.xi, Some(j)),
                            eta: merge_skip(&mf.eta, Some(j), &mg.eta, None),
                        };
                        *acc.entry(m).or_insert(C64::new(0.0, 0.0)) += c;
                    }
                }
            }
            (acc, tail)
        })
        .collect();

    let mut out = SparsePolynomial::zero(f.cutoff);
    let mut tail = 0.0;
    for (acc, t) in partials {
        tail += t;
        let mut entries: Vec<(Monomial, C64)> = acc.into_iter().collect();
        entries.sort_unstable_by(|x, y| x.0.cmp(&y.0));
        for (m, c) in entries {
            *out.terms.entry(m).or_insert(C64::new(0.0, 0.0)) += c;
        }
    }
    out.prune(DEFAULT_DROP_TOL);
    Ok((out, tail))
}

pub fn poisson_bracket(f: &SparsePolynomial, g: &SparsePolynomial) -> Result<SparsePolynomial> {
    poisson_bracket_truncated(f, g, usize::MAX).map(|(p, _)| p)
}

/// Overlap tables for each arity of `g`, from the cache directory when configured.
pub fn overlap_tables(g: &Nonlinearity, r: usize, cutoff: usize) -> Result<BTreeMap<usize, OverlapTable>> {
    let dir = cache_dir_from_env();
    let mut out = BTreeMap::new();
    for d in g.degrees().into_iter().filter(|&d| d <= r) {
        let t = match &dir {
            Some(dir) => OverlapTable::load_or_build(dir, d, cutoff)?,
            None => OverlapTable::build(d, cutoff)?,
        };
        out.insert(d, t);
    }
    Ok(out)
}

/// `P = ∫ g(Σ ξ_j φ_j, Σ η_j φ_j) dx` truncated to degree `r` and modes `1..=J`.
pub fn expand_nonlinearity(g: &Nonlinearity, r: usize, cutoff: usize) -> Result<SparsePolynomial> {
    g.validate()?;
    let tables = overlap_tables(g, r, cutoff)?;
    expand_nonlinearity_with_tables(g, r, cutoff, &tables)
}

fn multisets(n: usize, cutoff: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut cur = vec![1usize; n];
    loop {
        out.push(cur.clone());
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

fn multinomial(sorted: &[usize]) -> f64 {
    let mut denom = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut k = i;
        while k < sorted.len() && sorted[k] == sorted[i] {
            k += 1;
        }
        denom *= factorial((k - i) as u32);
        i = k;
    }
    factorial(sorted.len() as u32) / denom
}

pub fn expand_nonlinearity_with_tables(
    g: &Nonlinearity,
    r: usize,
    cutoff: usize,
    tables: &BTreeMap<usize, OverlapTable>,
) -> Result<SparsePolynomial> {
    g.validate()?;
    let mut p = SparsePolynomial::zero(cutoff);
    for (l, m) in g.support() {
        if l + m > r {
            continue;
        }
        let coeff = g.coefficient(l, m);
        let table = tables
            .get(&(l + m))
            .ok_or_else(|| Error::MissingInput(format!("overlap table of arity {}", l + m)))?;
        if table.cutoff < cutoff {
            return Err(Error::CutoffMismatch {
                left: table.cutoff,
                right: cutoff,
            });
        }
        let xs = multisets(l, cutoff);
        let es = multisets(m, cutoff);
        let mut all = Vec::with_capacity(l + m);
        for x in &xs {
            let wx = multinomial(x);
            for e in &es {
                all.clear();
                all.extend_from_slice(x);
                all.extend_from_slice(e);
                let a = table.get(&all)?;
                if a == 0.0 {
                    continue;
                }
                let c = coeff * (a * wx * multinomial(e));
                p.add_term(Monomial::new(x, e)?, c)?;
            }
        }
    }
    p.prune_exact();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::overlap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn mono(s: &[i64]) -> Monomial {
        Monomial::from_signed(s).unwrap()
    }

    pub(crate) fn random_poly(rng: &mut ChaCha8Rng, cutoff: usize, degrees: &[usize], n: usize) -> SparsePolynomial {
        let mut p = SparsePolynomial::zero(cutoff);
        for _ in 0..n {
            let d = degrees[rng.gen_range(0..degrees.len())];
            let idx: Vec<i64> = (0..d)
                .map(|_| {
                    let j = rng.gen_range(1..=cutoff as i64);
                    if rng.gen::<bool>() { j } else { -j }
                })
                .collect();
            p.add_term(mono(&idx), c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap();
        }
        p
    }

    fn real_part(p: &SparsePolynomial) -> SparsePolynomial {
        let mut q = p.clone();
        for (m, v) in p.iter() {
            q.add_term(m.conjugate(), v.conj()).unwrap();
        }
        q
    }

    #[test]
    fn canonical_form() {
        let a = mono(&[3, -2, 1, -2]);
        let b = mono(&[-2, 1, -2, 3]);
        assert_eq!(a, b);
        assert_eq!(a.signed(), vec![1, 3, -2, -2]);
        assert_eq!(a.to_string(), "1 3 -2 -2");
        assert_eq!(a.degree(), 4);
        assert!(mono(&[2, -2, 1, -1]).is_action_type());
        assert!(Monomial::from_signed(&[0, 1]).is_err());
        assert_eq!(mono(&[1, 1, -2]).orderings(), 3.0);
    }

    #[test]
    fn bracket_examples() {
        let f = SparsePolynomial::from_terms(3, [(mono(&[1, -1]), c(1.0, 0.0))]).unwrap();
        let g = SparsePolynomial::from_terms(3, [(mono(&[1]), c(1.0, 0.0))]).unwrap();
        let b = poisson_bracket(&f, &g).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.get(&mono(&[1])), c(0.0, -1.0));
        let h = SparsePolynomial::zero(4);
        assert!(matches!(poisson_bracket(&f, &h), Err(Error::CutoffMismatch { .. })));
    }

    #[test]
    fn h0_bracket_examples() {
        let f = FrequencyVector::unperturbed(3);
        let r = bracket_with_h0(&f, &ModeMonomial { monomial: mono(&[1]), coeff: c(1.0, 0.0) });
        assert_eq!(r.coeff, c(0.0, -1.0));
        let r = bracket_with_h0(&f, &ModeMonomial { monomial: mono(&[1, 2, -3]), coeff: c(1.0, 0.0) });
        assert_eq!(r.coeff, c(0.0, 1.0));
        let r = bracket_with_h0(&f, &ModeMonomial { monomial: mono(&[2, -2]), coeff: c(0.4, 0.1) });
        assert_eq!(r.coeff, c(0.0, 0.0));
    }

    #[test]
    fn h0_bracket_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (freq, exact) in [(FrequencyVector::unperturbed(6), true), (FrequencyVector::sampled(1, 6, 3), false)] {
            let h0 = SparsePolynomial::h0(&freq);
            let p = random_poly(&mut rng, 6, &[1, 2, 3, 4, 5], 200);
            for (m, a) in p.iter() {
                let single = SparsePolynomial::from_terms(6, [(m.clone(), *a)]).unwrap();
                let generic = poisson_bracket(&h0, &single).unwrap();
                let fast = bracket_with_h0(&freq, &ModeMonomial { monomial: m.clone(), coeff: *a });
                let g = generic.get(m);
                assert!(generic.len() <= 1);
                // agreement to rounding; integer frequencies leave only summation-order error
                let scale = a.norm() * m.xi().chain(m.eta()).map(|j| freq.get(j)).sum::<f64>();
                let tol = if exact { 4.0 } else { 8.0 } * f64::EPSILON * scale;
                assert!((g - fast.coeff).norm() <= tol, "{m}: {g} vs {}", fast.coeff);
            }
        }
    }

    #[test]
    fn antisymmetry_and_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let f = random_poly(&mut rng, 4, &[3], 12);
            let g = random_poly(&mut rng, 4, &[3], 12);
            let h = random_poly(&mut rng, 4, &[3], 12);
            assert!(poisson_bracket(&f, &f).unwrap().max_abs() <= 1e-12);
            let fg = poisson_bracket(&f, &g).unwrap();
            let gf = poisson_bracket(&g, &f).unwrap();
            assert!(fg.add(&gf).unwrap().max_abs() <= 1e-12);
            let j1 = poisson_bracket(&f, &poisson_bracket(&g, &h).unwrap()).unwrap();
            let j2 = poisson_bracket(&g, &poisson_bracket(&h, &f).unwrap()).unwrap();
            let j3 = poisson_bracket(&h, &fg).unwrap();
            let sum = j1.add(&j2).unwrap().add(&j3).unwrap();
            assert!(sum.max_abs() <= 1e-12, "{}", sum.max_abs());
        }
    }

    #[test]
    fn bracket_preserves_reality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = real_part(&random_poly(&mut rng, 5, &[3, 4], 30));
        let g = real_part(&random_poly(&mut rng, 5, &[3], 30));
        assert!(f.reality_certificate().is_real(1e-15));
        let b = poisson_bracket(&f, &g).unwrap();
        assert!(b.reality_certificate().is_real(1e-12));
    }

    #[test]
    fn truncated_bracket_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_poly(&mut rng, 4, &[3, 4], 20);
        let g = random_poly(&mut rng, 4, &[3], 20);
        let full = poisson_bracket(&f, &g).unwrap();
        let (low, tail) = poisson_bracket_truncated(&f, &g, 4).unwrap();
        assert_eq!(low, full.filter(|m| m.degree() <= 4));
        assert!(tail >= full.filter(|m| m.degree() > 4).iter().map(|(_, c)| c.norm()).sum::<f64>() - 1e-12);
    }

    #[test]
    fn vector_field_examples() {
        let p = SparsePolynomial::from_terms(2, [(mono(&[1, -1]), c(1.0, 0.0))]).unwrap();
        let mut z = StateVector::zeros(2);
        z.xi[0] = c(1.0, 0.0);
        z.eta[0] = c(1.0, 0.0);
        let x = p.vector_field_apply(&z);
        assert_eq!(x.xi[0], c(-1.0, 0.0));
        assert_eq!(x.eta[0], c(1.0, 0.0));
        assert_eq!(x.xi[1], c(0.0, 0.0));
    }

    #[test]
    fn vector_field_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_poly(&mut rng, 5, &[4], 40);
        let z = StateVector::from_xi((0..5).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
        let a = p.vector_field_apply(&z);
        let b = p.vector_field_apply(&z.scaled(0.3));
        for (x, y) in a.xi.iter().chain(&a.eta).zip(b.xi.iter().chain(&b.eta)) {
            assert!((x * 0.3f64.powi(3) - y).norm() <= 1e-14 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_poly(&mut rng, 4, &[2, 3, 4, 5], 60);
        let mut z = StateVector::zeros(4);
        for k in 0..4 {
            z.xi[k] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            z.eta[k] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let (dxi, deta) = p.gradient(&z);
        let h = 1e-5;
        for k in 0..4 {
            for (slot, analytic) in [(0, dxi[k]), (1, deta[k])] {
                let mut zp = z.clone();
                let mut zm = z.clone();
                if slot == 0 {
                    zp.xi[k] += h;
                    zm.xi[k] -= h;
                } else {
                    zp.eta[k] += h;
                    zm.eta[k] -= h;
                }
                let fd = (p.evaluate(&zp) - p.evaluate(&zm)) / (2.0 * h);
                assert!((fd - analytic).norm() <= 1e-6 * analytic.norm().max(1.0));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_poly(&mut rng, 7, &[3, 4], 50);
        let q = SparsePolynomial::from_csv(&p.to_csv()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.to_json()["terms"].as_array().unwrap().len(), p.len());
    }

    #[test]
    fn expansion_examples() {
        let p = expand_nonlinearity(&Nonlinearity::cubic(), 3, 1).unwrap();
        let a111 = overlap(&[1, 1, 1], 1).unwrap();
        assert!((p.get(&mono(&[1, 1, -1])) - c(a111, 0.0)).norm() < 1e-15);
        assert!((a111 - (2.0f64 / 3.0).sqrt() * std::f64::consts::PI.powf(-0.25)).abs() < 1e-15);
        assert!(p.reality_certificate().mismatch == 0.0);

        let q = expand_nonlinearity(&Nonlinearity::quartic(1.0), 4, 6).unwrap();
        assert_eq!(q.reality_certificate().mismatch, 0.0);
        assert!(q.iter().all(|(_, v)| v.im == 0.0));
        // coefficient of ξ_1 ξ_2 η_1 η_2 = 2!·2!·a_{1122}
        let a = overlap(&[1, 1, 2, 2], 6).unwrap();
        assert!((q.get(&mono(&[1, 2, -1, -2])).re - 4.0 * a).abs() < 1e-15);
    }

    #[test]
    fn expansion_matches_quadrature_of_g() {
        // P(z) = ∫ g(u, v) dx evaluated directly on a fine grid
        let g = Nonlinearity::new(vec![
            crate::nonlinearity::TaylorTerm { l: 2, m: 1, re: 0.7, im: 0.2 },
            crate::nonlinearity::TaylorTerm { l: 1, m: 2, re: 0.7, im: -0.2 },
            crate::nonlinearity::TaylorTerm { l: 2, m: 2, re: -0.5, im: 0.0 },
        ])
        .unwrap();
        let p = expand_nonlinearity(&g, 4, 4).unwrap();
        let z = StateVector::from_xi(vec![c(0.3, 0.1), c(-0.2, 0.05), c(0.1, -0.3), c(0.02, 0.04)]);
        let gh = crate::hermite::GaussHermite::new(60);
        let mut direct = c(0.0, 0.0);
        for (x, w) in gh.nodes.iter().zip(&gh.scaled_weights) {
            let phi = crate::hermite::eval_phi_all(4, *x);
            let u: C64 = (0..4).map(|k| z.xi[k] * phi[k]).sum();
            let v: C64 = (0..4).map(|k| z.eta[k] * phi[k]).sum();
            direct += g.eval(u, v) * *w;
        }
        assert!((direct - p.evaluate(&z)).norm() < 1e-13);
    }

    #[test]
    fn expansion_is_cutoff_monotone() {
        let p4 = expand_nonlinearity(&Nonlinearity::quartic(1.0), 4, 4).unwrap();
        let p7 = expand_nonlinearity(&Nonlinearity::quartic(1.0), 4, 7).unwrap();
        let restricted = SparsePolynomial { cutoff: 4, terms: p7.filter(|m| m.max_index() <= 4).terms };
        let d = p4.max_diff(&restricted);
    assert!(d <= 1e-14 * p4.max_abs(), "{d}");
    }

    #[test]
    fn class_diagnostic_basics() {
        let z = SparsePolynomial::zero(5).class_diagnostic(0.2, 1.0 / 24.0, &[1, 2, 4]);
        assert_eq!(z.c, vec![0.0; 3]);
        let p = expand_nonlinearity(&Nonlinearity::cubic(), 3, 10).unwrap();
        let d = p.class_diagnostic(0.2, 1.0 / 24.0, &[1, 2, 4]);
        assert!(d.c.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(d.c_plus.iter().zip(&d.c).all(|(a, b)| a >= b));
    }
}
