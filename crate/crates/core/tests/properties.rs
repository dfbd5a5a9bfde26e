use bilheat_core::exact::time_grid;
use bilheat_core::moment::{self, MomentOptions};
use bilheat_core::solver;
use bilheat_core::*;
use proptest::prelude::*;
use std::f64::consts::PI;

const N: usize = 32;

/// Real trig polynomial of degree ≤ 6 with the given coefficients.
fn trig(a: &[(f64, f64)]) -> TorusField {
    let a = a.to_vec();
    TorusField::from_fn(1, N, move |x| {
        a.iter()
            .enumerate()
            .map(|(k, (c, s))| c * (k as f64 * x[0]).cos() + s * (k as f64 * x[0]).sin())
            .sum()
    })
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn semigroup_law(a in coeffs(), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let f = trig(&a);
        let lhs = f.heat_semigroup(t1).unwrap().heat_semigroup(t2).unwrap();
        let rhs = f.heat_semigroup(t1 + t2).unwrap();
        prop_assert!(lhs.max_coeff_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn parseval_and_hermitian(a in coeffs()) {
        let f = trig(&a);
        let quad: f64 = f.grid_values().iter().map(|v| v * v).sum::<f64>() * 2.0 * PI / N as f64;
        let l2 = f.hs_norm(0).powi(2);
        prop_assert!((l2 - quad).abs() <= 1e-10 * quad.max(1e-300));
        prop_assert!(f.hermitian_defect() <= 1e-14);
    }

    #[test]
    fn hs_norm_is_monotone(a in coeffs()) {
        let f = trig(&a);
        prop_assert!(f.hs_norm(0) <= f.hs_norm(1) && f.hs_norm(1) <= f.hs_norm(2) && f.hs_norm(2) <= f.hs_norm(3));
    }

    #[test]
    fn b_operator_ignores_constants(a in coeffs(), c in -5.0..5.0f64) {
        let f = trig(&a);
        let shifted = f.add_constant(c);
        prop_assert!(shifted.b_operator().max_coeff_diff(&f.b_operator()) <= 1e-12);
    }

    #[test]
    fn squares_are_alias_free(a in -2.0..2.0f64, b in -2.0..2.0f64, k in 1usize..8) {
        let f = TorusField::from_fn(1, N, |x| a + b * (k as f64 * x[0]).cos());
        let want = TorusField::from_fn(1, N, |x| a * a + b * b / 2.0 + 2.0 * a * b * (k as f64 * x[0]).cos() + b * b / 2.0 * (2.0 * k as f64 * x[0]).cos());
        prop_assert!(f.pointwise_power(2).unwrap().max_coeff_diff(&want) <= 1e-12);
    }

    #[test]
    fn series_closed_form(n in 0u32..=30) {
        prop_assert!((moment::series_partial(n) - moment::series_closed(n)).abs() <= 1e-12);
    }

    #[test]
    fn time_grid_tiles_the_horizon(t in 0.01..3.0f64, t0 in 0.1..2.0f64, n in 1usize..40) {
        let g = time_grid(t, t0, n).unwrap();
        prop_assert!((g.taus[n] + g.tail - g.t_f).abs() <= 1e-12 * g.t_f.max(1.0));
        prop_assert!(g.windows.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(g.t_f <= t && g.t_f <= PI * PI / 6.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn moment_controls_vanish_at_both_ends(c in prop::collection::vec(-1.0..1.0f64, 4), t in 0.3..1.0f64) {
        let pots = PotentialSet::preset("mtB_five", 64).unwrap();
        let xi0 = TorusField::from_fn(1, 64, |x| c[0] * x[0].cos() + c[1] * x[0].sin() + c[2] * (2.0 * x[0]).cos() + c[3] * (3.0 * x[0]).sin());
        prop_assume!(xi0.l2_norm() > 1e-3);
        let prob = moment::compute_targets(&xi0, &pots, 1.0, 2, t, 4).unwrap();
        let opts = MomentOptions { strict: false, ..MomentOptions::default() };
        let sol = moment::solve_moment(&prob, &opts).unwrap();
        for v in [&sol.v1, &sol.v2] {
            prop_assert_eq!(v[0], 0.0);
            prop_assert_eq!(*v.last().unwrap(), 0.0);
        }
        prop_assert_eq!(sol.times[0], 0.0);
        prop_assert_eq!(*sol.times.last().unwrap(), t);
    }

    #[test]
    fn lipschitz_probe_is_linear_in_small_perturbations(eps in 1e-4..1e-3f64, k in 1usize..4) {
        let pots = PotentialSet::preset("mtA_d1", N).unwrap();
        let phi = TorusField::ground_state(1, N);
        let u = ControlSchedule::constant(pots.width(), 0.3, pots.stationary_control(1.0, 2).unwrap()).unwrap();
        let opts = SolverOptions::new(1.0, 2);
        let dir = TorusField::basis(N, Basis::Cos(k));
        let lhs = |e: f64| solver::lipschitz_probe(&phi, &(&phi + &dir.scaled(e)), &u, &u, &pots, &opts, 1, 10).unwrap();
        let (full, budget) = lhs(eps);
        let (half, _) = lhs(eps / 2.0);
        prop_assert!((full / (2.0 * half) - 1.0).abs() < 0.02);
        prop_assert!(full <= budget * (1.0 + 1e-9));
        let (same, zero) = solver::lipschitz_probe(&phi, &phi, &u, &u, &pots, &opts, 1, 10).unwrap();
        prop_assert_eq!((same, zero), (0.0, 0.0));
    }

    #[test]
    fn positive_data_stay_positive(a in 0.05..1.0f64, b in -1.0..1.0f64, u1 in -3.0..3.0f64, u2 in -3.0..3.0f64) {
        let pots = PotentialSet::preset("mtA_d1", N).unwrap();
        let psi0 = TorusField::from_fn(1, N, |x| a + (1.0 + b * x[0].sin()).powi(2));
        let sched = ControlSchedule::constant(pots.width(), 0.5, vec![0.0, u1, u2, 0.0, 0.0]).unwrap();
        let opts = SolverOptions::new(1.0, 2).with_record(solver::Record::EveryStep);
        let traj = solver::solve_nhe(&psi0, &sched, &pots, &opts).unwrap();
        prop_assert!(traj.min_grid.iter().all(|m| *m > 0.0));
    }
}
