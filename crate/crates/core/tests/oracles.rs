//! Steady-state quantities against brute-force references that share no
//! code with the library's quadrature: a 10⁶-point trapezoid rule on a fixed
//! wide window and dense sign scans.

use granular_basin::measures::{l2_distance, wasserstein2};
use granular_basin::steady_state::{
    chi, chi_with_slope, find_m_sigma, find_sigma_c, find_t_sigma, poincare_gap, steady_density,
    steady_grid, weighted_moment,
};
use granular_basin::{validate, EffectiveParams, GridMeasure, GridSpec, PolynomialPotential, SteadyStateSpec, ValidatedPotential};

const TRAPEZOID_POINTS: usize = 1_000_000;
const HALF_WINDOW: f64 = 8.0;

fn quartic() -> ValidatedPotential {
    validate(&PolynomialPotential::quartic()).unwrap()
}

/// `(∫ w, ∫ x w, ∫ x² w, ...)` up to order `k_max` for
/// `w = exp(-2(W_m - max)/σ²)` by the trapezoid rule on `[-8, 8]`.
fn trapezoid_moments(vp: &ValidatedPotential, alpha: f64, sigma: f64, m: f64, k_max: usize, points: usize) -> Vec<f64> {
    let h = 2.0 * HALF_WINDOW / (points - 1) as f64;
    let w_eff = |x: f64| vp.value(x) + 0.5 * alpha * x * x - alpha * m * x;
    let beta = 2.0 / (sigma * sigma);
    let shift = (0..points).map(|i| w_eff(-HALF_WINDOW + i as f64 * h)).fold(f64::INFINITY, f64::min);
    let mut acc = vec![0.0; k_max + 1];
    for i in 0..points {
        let x = -HALF_WINDOW + i as f64 * h;
        let end = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        let w = end * (-beta * (w_eff(x) - shift)).exp();
        let mut p = w;
        for a in acc.iter_mut() {
            *a += p;
            p *= x;
        }
    }
    let z = acc[0];
    acc.iter().map(|a| a / z).collect()
}

fn oracle_chi(vp: &ValidatedPotential, alpha: f64, sigma: f64, m: f64) -> f64 {
    trapezoid_moments(vp, alpha, sigma, m, 1, TRAPEZOID_POINTS)[1] - m
}

#[test]
fn chi_and_moments_match_trapezoid() {
    let vp = quartic();
    let spec = SteadyStateSpec::default().quadrature;
    for &(m, sigma) in &[(0.3, 0.25), (0.9, 0.5), (-1.2, 0.8), (0.05, 1.4), (1.7, 2.0)] {
        let mom = trapezoid_moments(&vp, 1.0, sigma, m, 4, TRAPEZOID_POINTS);
        let c = chi(&vp, 1.0, sigma, m, &spec).unwrap();
        assert!((c - (mom[1] - m)).abs() <= 1e-9, "chi at m={m}, sigma={sigma}: {c} vs {}", mom[1] - m);
        let params = EffectiveParams::new(1.0, sigma, m);
        for p in [2u32, 4] {
            let w = weighted_moment(&vp, &params, p, &spec).unwrap();
            assert!((w - mom[p as usize]).abs() <= 1e-9 * mom[p as usize].max(1.0), "moment {p}: {w} vs {}", mom[p as usize]);
        }
    }
}

#[test]
fn slope_matches_central_difference() {
    let vp = quartic();
    let spec = SteadyStateSpec::default().quadrature;
    for m in [0.0, 0.4, 1.1] {
        let (_, slope) = chi_with_slope(&vp, 1.0, 0.5, m, &spec).unwrap();
        let h = 1e-4;
        let fd = (chi(&vp, 1.0, 0.5, m + h, &spec).unwrap() - chi(&vp, 1.0, 0.5, m - h, &spec).unwrap()) / (2.0 * h);
        assert!((slope - fd).abs() < 1e-6, "m={m}: {slope} vs {fd}");
    }
}

/// Positive root located by a dense sign scan of the trapezoid χ and refined
/// by bisection on the same oracle.
fn oracle_m_sigma(vp: &ValidatedPotential, alpha: f64, sigma: f64) -> Option<f64> {
    let points = 100_001;
    let f = |m: f64| trapezoid_moments(vp, alpha, sigma, m, 1, points)[1] - m;
    let n = 400;
    let hi_end = 3.0;
    let mut prev = f(hi_end / n as f64);
    for k in 2..=n {
        let m = hi_end * k as f64 / n as f64;
        let cur = f(m);
        if prev > 0.0 && cur <= 0.0 {
            let (mut lo, mut hi) = (m - hi_end / n as f64, m);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        prev = cur;
    }
    None
}

#[test]
fn m_sigma_matches_dense_scan() {
    let vp = quartic();
    let spec = SteadyStateSpec::default();
    for (alpha, sigma) in [(1.0, 0.5), (2.0, 0.5), (0.8, 0.6)] {
        let lib = find_m_sigma(&vp, alpha, sigma, &spec).unwrap().unwrap();
        let oracle = oracle_m_sigma(&vp, alpha, sigma).unwrap();
        assert!((lib - oracle).abs() < 1e-7, "alpha={alpha} sigma={sigma}: {lib} vs {oracle}");
    }
    assert!(find_m_sigma(&vp, 1.0, 2.0, &spec).unwrap().is_none());
    assert!(oracle_m_sigma(&vp, 1.0, 2.0).is_none());
}

#[test]
fn t_sigma_is_the_interior_maximum() {
    let vp = quartic();
    let spec = SteadyStateSpec::default();
    let t = find_t_sigma(&vp, 1.0, 0.5, &spec).unwrap();
    let m = find_m_sigma(&vp, 1.0, 0.5, &spec).unwrap().unwrap();
    assert!(t > 0.0 && t < m);
    let c = |x| oracle_chi(&vp, 1.0, 0.5, x);
    let peak = c(t);
    for dx in [-0.05, -0.01, 0.01, 0.05] {
        assert!(c(t + dx) < peak, "chi({}) >= chi({t})", t + dx);
    }
}

#[test]
fn sigma_c_is_where_the_symmetric_slope_vanishes() {
    // At σ_c the slope of χ at 0 is (2α/σ²) Var(ν_0) - 1 = 0.
    let vp = quartic();
    for alpha in [1.0, 2.0] {
        let sc = find_sigma_c(&vp, alpha, &SteadyStateSpec::default()).unwrap();
        let var = trapezoid_moments(&vp, alpha, sc, 0.0, 2, TRAPEZOID_POINTS)[2];
        let slope = 2.0 * alpha * var / (sc * sc) - 1.0;
        assert!(slope.abs() < 1e-5, "alpha={alpha}: sigma_c={sc}, slope {slope}");
    }
}

#[test]
fn steady_density_matches_pointwise_gibbs_weight() {
    let vp = quartic();
    let spec = SteadyStateSpec::default().quadrature;
    let g = steady_grid(&vp, 1.0, 0.5, 0.8, 1024, &spec).unwrap();
    let mu = steady_density(&vp, 1.0, 0.5, 0.8, g, &spec).unwrap();
    let mom = trapezoid_moments(&vp, 1.0, 0.5, 0.8, 2, TRAPEZOID_POINTS);
    assert!((mu.mean() - mom[1]).abs() < 1e-9);
    assert!((mu.moment(2) - mom[2]).abs() < 1e-9);
}

#[test]
fn spectral_gap_respects_curvature_bound_and_converges() {
    // With α = 2 the effective potential has curvature ≥ α - θ = 1.
    let vp = quartic();
    let spec = SteadyStateSpec::default().quadrature;
    let g = steady_grid(&vp, 2.0, 0.5, 0.5, 1024, &spec).unwrap();
    let coarse = poincare_gap(&vp, 2.0, 0.5, 0.5, g).unwrap();
    let fine = poincare_gap(&vp, 2.0, 0.5, 0.5, g.refined()).unwrap();
    let finer = poincare_gap(&vp, 2.0, 0.5, 0.5, g.refined().refined()).unwrap();
    assert!(fine >= 1.0 - 1e-6, "{fine}");
    // second order in Δx
    let ratio = (coarse - fine).abs() / (fine - finer).abs();
    assert!(ratio > 3.0 && ratio < 5.0, "refinement ratio {ratio}");
}

#[test]
fn gaussian_distances_match_closed_forms() {
    let g = GridSpec::symmetric(6.0, 8192).unwrap();
    let (s1, s2) = (0.4, 0.55);
    let a = GridMeasure::gaussian(g, 0.3, s1).unwrap();
    let b = GridMeasure::gaussian(g, -0.2, s2).unwrap();
    let w2 = wasserstein2(&a, &b);
    let exact = (0.5f64.powi(2) + (s1 - s2).powi(2)).sqrt();
    assert!((w2 - exact).abs() < 1e-4, "{w2} vs {exact}");

    // chi-square distance between equal-variance normals
    let s = 0.5;
    let p = GridMeasure::gaussian(g, 0.1, s).unwrap();
    let q = GridMeasure::gaussian(g, -0.1, s).unwrap();
    let exact = ((0.2f64 / s).powi(2).exp() - 1.0).sqrt();
    let l2 = l2_distance(&p, &q).unwrap();
    assert!((l2 - exact).abs() < 1e-6, "{l2} vs {exact}");
}
