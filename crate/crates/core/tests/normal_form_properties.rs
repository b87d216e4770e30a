use num_complex::Complex64 as C64;

use qho_birkhoff::dynamics::scaled_initial_state;
use qho_birkhoff::frequency::{scan_nonresonance, FrequencyVector};
use qho_birkhoff::nonlinearity::Nonlinearity;
use qho_birkhoff::normal_form::{
    birkhoff_iterate, lie_flow, lie_transform_series, FlowOptions, NormalFormOptions, NormalFormResult,
};
use qho_birkhoff::poly::{expand_nonlinearity, poisson_bracket, SparsePolynomial};

const SEED: u64 = 20240601;
const NU: f64 = 0.2;
const BETA: f64 = 1.0 / 24.0;

fn profile(j: usize) -> Vec<C64> {
    let mut p = vec![C64::new(0.0, 0.0); j];
    for (k, c) in p.iter_mut().enumerate().take(4) {
        *c = C64::from_polar(1.0 / (k + 1) as f64, 1.3 * k as f64 + 0.4 + 0.1 * k as f64);
    }
    p
}

fn cubic_nf(j: usize, r: usize) -> (FrequencyVector, SparsePolynomial, NormalFormResult) {
    let freq = FrequencyVector::sampled(1, j, SEED);
    let p = expand_nonlinearity(&Nonlinearity::cubic(), r, j).unwrap();
    let nf = birkhoff_iterate(&p, &freq, r, &NormalFormOptions::default()).unwrap();
    (freq, p, nf)
}

fn restrict(p: &SparsePolynomial, max_degree: usize) -> SparsePolynomial {
    p.filter(|m| m.degree() <= max_degree)
}

#[test]
fn truncated_flow_consistency() {
    let (freq, p, nf) = cubic_nf(4, 3);
    let h = SparsePolynomial::h0(&freq).add(&p).unwrap();
    let chi = nf.chi(3).unwrap();
    let opts = FlowOptions::default();
    for r in [3usize, 4] {
        let (q, _) = lie_transform_series(&h, chi, r).unwrap();
        let errors: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&eps| {
                let z = scaled_initial_state(&profile(4), eps, 0.0);
                let w = lie_flow(chi, &z, 1.0, &opts).unwrap();
                (h.evaluate(&w) - q.evaluate(&z)).norm()
            })
            .collect();
        let expected = 2f64.powi(r as i32 + 1);
        for pair in errors.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(
                (ratio / expected - 1.0).abs() < 0.2,
                "r = {r}: error ratio {ratio}, expected ≈ {expected} ({errors:?})"
            );
        }
    }
}

#[test]
fn order_monotonicity() {
    let (_, _, nf5) = cubic_nf(4, 5);
    let (_, _, nf4) = cubic_nf(4, 4);
    let scale = nf5.transformed.max_abs();
    for k in 3..=4 {
        assert!(nf5.chi(k).unwrap().max_diff(nf4.chi(k).unwrap()) <= 1e-14 * scale, "χ_{k}");
    }
    assert!(restrict(&nf5.transformed, 4).max_diff(&nf4.transformed) <= 1e-14 * scale);
    assert!(restrict(&nf5.z, 4).max_diff(&nf4.z) <= 1e-14 * scale);
}

#[test]
fn class_plateau_for_cubic_expansion() {
    let n_list = [1, 2, 4];
    let c: Vec<Vec<f64>> = [30, 45, 60]
        .iter()
        .map(|&j| {
            expand_nonlinearity(&Nonlinearity::cubic(), 3, j)
                .unwrap()
                .class_diagnostic(NU, BETA, &n_list)
                .c
        })
        .collect();
    for (i, n) in n_list.iter().enumerate() {
        assert!(c[2][i].is_finite() && c[2][i] > 0.0);
        let change = (c[2][i] - c[1][i]).abs() / c[1][i];
        assert!(change < 0.05, "N = {n}: c = {:?}", c.iter().map(|v| v[i]).collect::<Vec<_>>());
    }
}

#[test]
fn class_closure_under_bracket() {
    // χ in the + class at ν₁, P in the class at ν₂, bracket at ν' = 2(ν₁+ν₂)+1
    let nu_prime = 2.0 * (NU + NU) + 1.0;
    let n_list = [1, 2];
    let c: Vec<Vec<f64>> = [12, 18, 24]
        .iter()
        .map(|&j| {
            let (_, p, nf) = cubic_nf(j, 3);
            poisson_bracket(nf.chi(3).unwrap(), &p)
                .unwrap()
                .class_diagnostic(nu_prime, BETA, &n_list)
                .c
        })
        .collect();
    for (i, n) in n_list.iter().enumerate() {
        assert!(c[2][i].is_finite() && c[2][i] > 0.0);
        let change = (c[2][i] - c[1][i]).abs() / c[1][i];
        assert!(change < 0.05, "N = {n}: c = {:?}", c.iter().map(|v| v[i]).collect::<Vec<_>>());
    }
}

#[test]
fn generators_are_smoothed_by_the_certified_gamma() {
    let j = 8;
    let delta = 4.0;
    let n_list = [1, 2, 4];
    let (freq, p, nf) = cubic_nf(j, 4);
    let gamma = scan_nonresonance(&freq, 4, j, 0.0, delta).unwrap().admissible_gamma;
    assert!(gamma > 0.0);
    let h = SparsePolynomial::h0(&freq).add(&p).unwrap();
    let (after3, _) = lie_transform_series(&h, nf.chi(3).unwrap(), 4).unwrap();
    let sources = [p.homogeneous_part(3), after3.homogeneous_part(4)];
    for (k, q) in (3..=4).zip(&sources) {
        let src = q.class_diagnostic(NU, BETA, &n_list);
        let chi = nf.chi(k).unwrap().class_diagnostic(NU + delta, BETA, &n_list);
        for i in 0..n_list.len() {
            assert!(chi.c_plus[i] > 0.0);
            assert!(
                chi.c_plus[i] <= src.c[i] / gamma * (1.0 + 1e-12),
                "k = {k}, N = {}: c+(χ) = {}, c(Q)/γ = {}",
                n_list[i],
                chi.c_plus[i],
                src.c[i] / gamma
            );
        }
    }
}

#[test]
fn gauge_invariant_nonlinearity_stays_balanced() {
    let j = 6;
    let freq = FrequencyVector::sampled(1, j, SEED);
    let p = expand_nonlinearity(&Nonlinearity::quartic(1.0), 6, j).unwrap();
    let nf = birkhoff_iterate(&p, &freq, 6, &NormalFormOptions::default()).unwrap();
    let balanced = |q: &SparsePolynomial| q.iter().all(|(m, _)| m.xi().count() == m.eta().count());
    assert!(balanced(&p));
    assert!(balanced(&nf.z));
    assert!(balanced(&nf.transformed));
    for k in 3..=6 {
        assert!(balanced(nf.chi(k).unwrap()));
    }
    // odd degrees never appear
    assert!(nf.chi(3).unwrap().is_empty() && nf.chi(5).unwrap().is_empty());
    assert!(nf.passes_terminal_check());
}
