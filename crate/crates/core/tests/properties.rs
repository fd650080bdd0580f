use ldp_core::discretize::{build_generator, invariant_density, model_density, semigroup_step};
use ldp_core::expansion::{exact_tail, fit_coefficients};
use ldp_core::model::center_observable;
use ldp_core::rate::rate_point;
use ldp_core::spectral::cgf;
use ldp_core::verify::brute_force_chain_tail;
use ldp_core::{
    DiscreteChainSpec, EvaluationFrame, ExpansionSettings, Field, Model, PeriodicGrid, RateSettings, TiltedFamily,
    TorusDiffusionSpec,
};
use proptest::prelude::*;

fn diffusion(noise_amp: f64, drift_amp: f64, obs_amp: f64) -> TorusDiffusionSpec {
    TorusDiffusionSpec::one_dimensional(
        Field::Sum(vec![Field::constant(1.0), Field::cos(noise_amp, 1)]),
        Field::sin(drift_amp, 1),
        Field::cos(obs_amp, 1),
        Field::constant(1.0),
    )
}

fn stochastic_row(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn base_semigroup_is_stochastic(noise in -0.5f64..0.5, drift in -1.0f64..1.0, t in 0.01f64..2.0) {
        let spec = diffusion(noise, drift, 0.0);
        let g = build_generator(&spec, &PeriodicGrid::new(16, 1).unwrap()).unwrap();
        prop_assert!(g.conservation_defect() < 1e-10);
        let e = semigroup_step(&g, t).unwrap();
        for i in 0..e.nrows() {
            let row: f64 = (0..e.ncols()).map(|j| e[(i, j)].re).sum();
            prop_assert!((row - 1.0).abs() < 1e-12, "row {} sums to {}", i, row);
            prop_assert!((0..e.ncols()).all(|j| e[(i, j)].re > -1e-14));
        }
    }

    #[test]
    fn cgf_is_convex_and_vanishes_at_zero(obs in -1.0f64..1.0, theta in 0.1f64..2.0, h in 0.05f64..0.5) {
        let family = TiltedFamily::diffusion(&diffusion(0.2, 0.3, obs), PeriodicGrid::new(32, 1).unwrap()).unwrap();
        prop_assert!(cgf(&family, 0.0).unwrap().abs() < 1e-10);
        let lo = cgf(&family, theta - h).unwrap();
        let mid = cgf(&family, theta).unwrap();
        let hi = cgf(&family, theta + h).unwrap();
        prop_assert!(lo + hi - 2.0 * mid > 0.0);
    }

    #[test]
    fn legendre_duality_holds(obs in 0.0f64..1.5, a in 0.05f64..2.0) {
        let family = TiltedFamily::diffusion(&diffusion(0.0, 0.0, obs), PeriodicGrid::new(32, 1).unwrap()).unwrap();
        let p = rate_point(&family, a, &RateSettings::default()).unwrap();
        prop_assert!(p.duality_residual().abs() < 1e-10);
        prop_assert!(p.rate >= 0.0 && p.theta_a > 0.0 && p.rate_second > 0.0);
        // The rate dominates every supporting line.
        for theta in [0.5 * p.theta_a, 2.0 * p.theta_a] {
            prop_assert!(p.rate >= a * theta - cgf(&family, theta).unwrap() - 1e-12);
        }
    }

    #[test]
    fn centered_observable_has_zero_mean(drift in -1.0f64..1.0, offset in -2.0f64..2.0, amp in -1.0f64..1.0) {
        let spec = TorusDiffusionSpec::one_dimensional(
            Field::constant(1.0),
            Field::sin(drift, 1),
            Field::Sum(vec![Field::constant(offset), Field::cos(amp, 1)]),
            Field::constant(1.0),
        );
        let family = TiltedFamily::diffusion(&spec, PeriodicGrid::new(32, 1).unwrap()).unwrap();
        let density = model_density(&family).unwrap();
        let centered = center_observable(&Model::TorusDiffusion(spec), &density).unwrap();
        let family = TiltedFamily::new(&centered, 32).unwrap();
        prop_assert!(density.expectation(&family.drift).abs() < 1e-12);
    }

    #[test]
    fn lattice_tail_matches_enumeration(
        rows in prop::collection::vec(prop::collection::vec(0.05f64..1.0, 3), 3),
        increments in prop::collection::vec(-1i32..=2, 3),
        n in 4usize..16,
        frac in 0.2f64..0.7,
        start in 0usize..3,
    ) {
        prop_assume!(increments.iter().max() > increments.iter().min());
        let chain = DiscreteChainSpec {
            transition: rows.into_iter().map(stochastic_row).collect(),
            increment_mean: increments.iter().map(|&k| k as f64).collect(),
            increment_var: vec![0.0; 3],
        };
        let family = TiltedFamily::chain(&chain).unwrap();
        let density = invariant_density(&family.base_generator()).unwrap();
        let mean = density.expectation(&family.drift);
        let top = *increments.iter().max().unwrap() as f64;
        // Put the level halfway between lattice points.
        let a = ((mean + frac * (top - mean)) * n as f64).floor() / n as f64 + 0.5 / n as f64;
        prop_assume!(a > mean + 1e-3 && a < top);
        let frame = EvaluationFrame::at(start);
        let exact = exact_tail(&family, &frame, a, n as f64, &ExpansionSettings::default()).unwrap();
        let brute = brute_force_chain_tail(&chain, &frame, n, a).unwrap();
        prop_assert!((exact - brute).abs() <= 1e-6 * brute, "exact {} brute {}", exact, brute);
    }

    #[test]
    fn fit_recovers_any_truncated_series(d in prop::collection::vec(-2.0f64..2.0, 3), d0 in 0.1f64..2.0) {
        let times: Vec<f64> = (1..=24).map(|k| 10.0 * k as f64).collect();
        let coef = [d0, d[0], d[1]];
        let values: Vec<f64> = times
            .iter()
            .map(|t| coef.iter().enumerate().map(|(k, c)| c * t.powf(-(k as f64 + 0.5))).sum())
            .collect();
        let fit = fit_coefficients(1.0, &times, &values, 4, Some(d0)).unwrap();
        for (c, e) in fit.coefficients.iter().zip(coef) {
            prop_assert!((c - e).abs() < 1e-7 * (1.0 + e.abs()));
        }
        prop_assert!(fit.d0_gap.unwrap() < 1e-8);
    }
}
