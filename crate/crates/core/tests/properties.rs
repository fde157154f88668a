use proptest::prelude::*;

use granular_basin::fokker_planck::{FluxScheme, FpSolver};
use granular_basin::measures::{
    l2_distance, mixture_on_grid, wasserstein2, wasserstein2_samples, wasserstein2_sorted_to_measure,
};
use granular_basin::particle_sim::{step_mkv, ParticleEnsemble};
use granular_basin::steady_state::{chi, classify_nearest, SteadyLimit};
use granular_basin::{validate, GridMeasure, GridSpec, PolynomialPotential, QuadratureSpec, ValidatedPotential};

fn quartic() -> ValidatedPotential {
    validate(&PolynomialPotential::quartic()).unwrap()
}

fn grid() -> GridSpec {
    GridSpec::symmetric(5.0, 1024).unwrap()
}

prop_compose! {
    fn mixture()(w in 0.05f64..0.95, m1 in -2.0f64..2.0, m2 in -2.0f64..2.0, s1 in 0.15f64..0.6, s2 in 0.15f64..0.6) -> GridMeasure {
        mixture_on_grid(grid(), &[w, 1.0 - w], &[(m1, s1), (m2, s2)]).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chi_is_odd(m in 0.0f64..2.0, sigma in 0.3f64..1.5, alpha in 0.5f64..2.5) {
        let vp = quartic();
        let q = QuadratureSpec::default();
        let a = chi(&vp, alpha, sigma, m, &q).unwrap();
        let b = chi(&vp, alpha, sigma, -m, &q).unwrap();
        prop_assert!((a + b).abs() <= 1e-10, "{} {}", a, b);
    }

    #[test]
    fn w2_is_a_metric(a in mixture(), b in mixture(), c in mixture()) {
        let ab = wasserstein2(&a, &b);
        let ba = wasserstein2(&b, &a);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(wasserstein2(&a, &a) <= 1e-12);
        let bc = wasserstein2(&b, &c);
        let ac = wasserstein2(&a, &c);
        prop_assert!(ac <= ab + bc + 1e-10);
    }

    #[test]
    fn w2_of_translate_is_the_shift(m in -1.0f64..1.0, s in 0.2f64..0.5, shift in -1.5f64..1.5) {
        let a = GridMeasure::gaussian(grid(), m, s).unwrap();
        let b = GridMeasure::gaussian(grid(), m + shift, s).unwrap();
        prop_assert!((wasserstein2(&a, &b) - shift.abs()).abs() < 1e-4);
    }

    #[test]
    fn l2_self_distance_vanishes(a in mixture()) {
        prop_assert!(l2_distance(&a, &a).unwrap() <= 1e-12);
    }

    #[test]
    fn sample_w2_is_symmetric_and_shift_exact(xs in prop::collection::vec(-3.0f64..3.0, 2..64), shift in -2.0f64..2.0) {
        let ys: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert!((wasserstein2_samples(&xs, &ys) - shift.abs()).abs() < 1e-12);
        let zs: Vec<f64> = xs.iter().rev().map(|x| x * 0.5).collect();
        prop_assert!((wasserstein2_samples(&xs, &zs) - wasserstein2_samples(&zs, &xs)).abs() <= 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf(a in mixture(), u in 0.001f64..0.999) {
        let x = a.quantiles().at(u);
        prop_assert!((a.cdf(x) - u).abs() < 1e-9);
    }

    #[test]
    fn sorted_samples_at_quantile_ranks_are_close(a in mixture()) {
        let n = 2000;
        let q = a.quantiles();
        let xs: Vec<f64> = (0..n).map(|i| q.at((i as f64 + 0.5) / n as f64)).collect();
        prop_assert!(wasserstein2_sorted_to_measure(&xs, &a) < 1e-9);
    }

    #[test]
    fn classification_is_a_present_state(p in 0.0f64..3.0, z in 0.0f64..3.0, m in 0.0f64..3.0, absent in 0usize..4) {
        let mut d = [p, z, m];
        if absent < 3 {
            d[absent] = f64::NAN;
        }
        let label = classify_nearest(d[0], d[1], d[2]);
        let idx = match label {
            SteadyLimit::NuPlus => Some(0),
            SteadyLimit::NuZero => Some(1),
            SteadyLimit::NuMinus => Some(2),
            SteadyLimit::Undecided => None,
        };
        if let Some(i) = idx {
            prop_assert!(d[i].is_finite());
            for (j, v) in d.iter().enumerate() {
                if j != i && v.is_finite() {
                    prop_assert!(*v >= 2.0 * d[i]);
                }
            }
        }
        // mirror symmetry of the rule
        let mirrored = classify_nearest(d[2], d[1], d[0]);
        let expect = match label {
            SteadyLimit::NuPlus => SteadyLimit::NuMinus,
            SteadyLimit::NuMinus => SteadyLimit::NuPlus,
            other => other,
        };
        prop_assert_eq!(mirrored, expect);
    }

    #[test]
    fn fokker_planck_conserves_mass_and_positivity(a in mixture(), alpha in 0.5f64..2.0, sigma in 0.4f64..1.0) {
        let vp = quartic();
        let g = GridSpec::symmetric(4.0, 256).unwrap();
        let mu0 = a.resample(g).unwrap();
        let mut s = FpSolver::new(&mu0, &vp, alpha, sigma, g, FluxScheme::ChangCooper).unwrap();
        let dt = s.uniform_cfl_bound();
        let mut energy = s.free_energy().unwrap();
        for _ in 0..200 {
            let mass = s.mass();
            s.step(dt).unwrap();
            prop_assert!((s.mass() - mass).abs() <= 1e-12);
            let e = s.free_energy().unwrap();
            prop_assert!(e <= energy + 1e-10, "free energy rose by {}", e - energy);
            energy = e;
        }
        prop_assert!(s.density().iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn interaction_cancels_in_the_mean(xs in prop::collection::vec(-2.5f64..2.5, 2..200), alpha in 0.1f64..3.0) {
        let vp = quartic();
        let dt = 1e-3;
        let mut ens = ParticleEnsemble::from_positions(xs.clone(), 0);
        step_mkv(&mut ens, &vp, alpha, 0.0, dt).unwrap();
        let n = xs.len() as f64;
        let avg_grad = xs.iter().map(|&x| vp.grad(x)).sum::<f64>() / n;
        let before = xs.iter().sum::<f64>() / n;
        prop_assert!(((ens.mean() - before) / dt + avg_grad).abs() < 1e-9 * (1.0 + avg_grad.abs()));
    }
}
