// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Cross-module invariants checked on random inputs.

use crate::config::{load_preset, parse_config, PRESETS};
use crate::estimator::ControlGains;
use crate::metrics::{
    conditional_variances, effective_temperature, ensemble_reduce, occupation_at, QuadMoments, TempConvention,
    ROBERTSON_TOL,
};
use crate::operators::{DensityState, FactorSpace, C64};
use crate::reduced::coeffs_from;
use proptest::prelude::*;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const OMEGA_M: f64 = TWO_PI * 1e9;

fn quad() -> impl Strategy<Value = QuadMoments> {
    (-3.0..3.0f64, -3.0..3.0f64, 0.25..4.0f64, 0.25..4.0f64)
        .prop_map(|(mean_x, mean_p, v_x, v_p)| QuadMoments { mean_x, mean_p, v_x, v_p })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ensemble_reduce_ignores_trajectory_order(
        mut qs in prop::collection::vec(quad(), 30..80),
        rot in 0usize..80,
    ) {
        let a = ensemble_reduce(&qs, OMEGA_M).unwrap();
        let k = rot % qs.len();
        qs.rotate_left(k);
        qs.reverse();
        let b = ensemble_reduce(&qs, OMEGA_M).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn effective_temperature_is_monotone_and_inverts(n in 1e-4..1e3f64, f in 1.001..2.0f64) {
        for conv in [TempConvention::Angular, TempConvention::Linear] {
            let t = effective_temperature(n, OMEGA_M, conv).unwrap();
            let t2 = effective_temperature(n * f, OMEGA_M, conv).unwrap();
            prop_assert!(t2 > t);
            let back = occupation_at(t, OMEGA_M, conv);
            prop_assert!((back / n - 1.0).abs() < 1e-12, "{} vs {}", back, n);
        }
    }

    #[test]
    fn coupling_coefficients_recombine(vx in 0.0..0.5f64, vp in 0.0..1.2f64) {
        // C1 = (α_x + iα_p)/2 and C2* = (α_x − iα_p)/2
        let (wt, gt, g) = (TWO_PI * 4.3e9, TWO_PI * 20e6, TWO_PI * 4.9e6);
        let rc = coeffs_from(&ControlGains::new(vx * wt, vp * wt), wt, gt, g).unwrap();
        let i = C64::new(0.0, 1.0);
        let c1 = (rc.alpha_x + i * rc.alpha_p) * 0.5;
        let c2c = (rc.alpha_x - i * rc.alpha_p) * 0.5;
        let scale = rc.c1.norm().max(rc.c2.norm());
        prop_assert!((c1 - rc.c1).norm() <= 1e-14 * scale);
        prop_assert!((c2c - rc.c2.conj()).norm() <= 1e-14 * scale);
        // below v_x = ω_T/2 the resonator denominator stays positive
        prop_assert!(rc.chi > 0.0);
    }

    #[test]
    fn robertson_holds_on_random_beam_states(
        re in prop::collection::vec(-1.0..1.0f64, 8),
        im in prop::collection::vec(-1.0..1.0f64, 8),
    ) {
        // support below the top level keeps [x, p] = i exact on the state
        let levels = 10;
        let mut psi: Vec<C64> = re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect();
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        psi.iter_mut().for_each(|z| *z /= norm);
        psi.resize(levels, C64::new(0.0, 0.0));
        let rho = DensityState::from_pure(FactorSpace::beam(levels).unwrap(), &psi).unwrap();
        let (vx, vp) = conditional_variances(&rho).unwrap();
        prop_assert!(vx * vp >= 0.25 - ROBERTSON_TOL, "{} * {}", vx, vp);
    }

    #[test]
    fn config_survives_a_text_round_trip(
        idx in 0usize..6,
        seed in any::<u64>(),
        eta in 0.05..1.0f64,
        dt in 1e-4..0.2f64,
        n_traj in 1usize..5000,
    ) {
        let mut cfg = load_preset(PRESETS[idx].0).unwrap();
        cfg.seed = seed;
        cfg.physical.eta = eta;
        cfg.dt_wm = dt;
        cfg.n_traj = n_traj;
        let back = parse_config(&cfg.to_config_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
