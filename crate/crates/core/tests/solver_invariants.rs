use bilheat_core::field::ground_value;
use bilheat_core::potentials::mu_closed_form;
use bilheat_core::solver::{self, Record};
use bilheat_core::*;
use std::f64::consts::PI;

const N: usize = 64;

fn setup() -> (PotentialSet, TorusField, ControlSchedule) {
    let pots = PotentialSet::preset("mtA_d1", N).unwrap();
    let psi0 = TorusField::from_fn(1, N, |x| 0.8 + 0.3 * x[0].cos() - 0.2 * (2.0 * x[0]).sin());
    let sched =
        ControlSchedule::constant(pots.width(), 0.2, vec![0.4, -0.3, 0.5, 0.0, 0.0]).unwrap();
    (pots, psi0, sched)
}

#[test]
fn integrator_is_second_order() {
    let (pots, psi0, sched) = setup();
    let run = |dt: f64| {
        solver::evolve(
            &psi0,
            &sched,
            &pots,
            &SolverOptions::new(1.0, 2).with_max_dt(dt),
        )
        .unwrap()
    };
    let dt = 4e-3;
    let reference = run(dt / 32.0);
    let e1 = (&run(dt) - &reference).hs_norm(1);
    let e2 = (&run(dt / 2.0) - &reference).hs_norm(1);
    let ratio = e2 / e1;
    assert!(
        (ratio - 0.25).abs() <= 0.2 * 0.25,
        "ratio {ratio} ({e1:e}, {e2:e})"
    );
}

#[test]
fn linearization_error_is_quadratic() {
    let (pots, _, _) = setup();
    let phi = TorusField::ground_state(1, N);
    let xi0 = TorusField::from_fn(1, N, |x| x[0].cos() + 0.5 * (3.0 * x[0]).sin());
    let t = 0.3;
    let mut v = vec![0.0; pots.width()];
    v[1] = 0.7;
    let lin_sched = ControlSchedule::constant(pots.width(), t, v.clone()).unwrap();
    let lin =
        solver::solve_linearized(&xi0, &lin_sched, &pots, 1.0, 2, &Record::Nodes, 0.0).unwrap();
    let xi_t = lin.final_state().clone();
    let u_kappa = pots.stationary_control(1.0, 2).unwrap();
    let gap = |eps: f64| {
        let u: Vec<f64> = u_kappa.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let sched = ControlSchedule::constant(pots.width(), t, u).unwrap();
        let opts = SolverOptions::new(1.0, 2).with_max_dt(2e-4);
        let fin = solver::evolve(&(&phi + &xi0.scaled(eps)), &sched, &pots, &opts).unwrap();
        (&(&fin - &phi) - &xi_t.scaled(eps)).hs_norm(1)
    };
    let ratio = gap(1e-2) / gap(5e-3);
    assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
}

#[test]
fn linearized_constant_mu_forcing_matches_duhamel() {
    let pots = PotentialSet::preset("mtB_five", N).unwrap();
    let (kappa, p, t, a) = (1.0, 2, 0.4, 1e-3);
    let phi = ground_value(1);
    let sigma = kappa * p as f64 * phi.powi(p as i32);
    let mut v = vec![0.0; pots.width()];
    v[pots.width() - 2] = a;
    let sched = ControlSchedule::constant(pots.width(), t, v).unwrap();
    let zero = TorusField::zeros(1, N);
    let fin = solver::solve_linearized(&zero, &sched, &pots, kappa, p, &Record::Nodes, 0.0)
        .unwrap()
        .final_state()
        .clone();
    for k in 1..=8usize {
        let omega = (k * k) as f64 + sigma;
        let mu = mu_closed_form(1, k).unwrap() / PI.sqrt();
        let want = a * phi * mu * (1.0 - (-omega * t).exp()) / omega;
        let got = fin.basis_coeff(Basis::Cos(k)).unwrap();
        assert!(
            (got - want).abs() <= 1e-8 * want.abs(),
            "k = {k}: {got} vs {want}"
        );
        assert!(fin.basis_coeff(Basis::Sin(k)).unwrap().abs() <= 1e-12 * want.abs());
    }
}

#[test]
fn sine_mode_ignores_mu1_forcing() {
    let pots = PotentialSet::preset("mtB_five", N).unwrap();
    let sigma = 2.0 * ground_value(1).powi(2);
    let t = 0.25;
    let mut v = vec![0.0; pots.width()];
    v[pots.width() - 2] = 0.3;
    let sched = ControlSchedule::constant(pots.width(), t, v).unwrap();
    let s3 = TorusField::basis(N, Basis::Sin(3));
    let fin = solver::solve_linearized(&s3, &sched, &pots, 1.0, 2, &Record::Nodes, 0.0)
        .unwrap()
        .final_state()
        .clone();
    let got = fin.basis_coeff(Basis::Sin(3)).unwrap();
    let want = (-(9.0 + sigma) * t).exp();
    assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
}

#[test]
fn stationary_ground_state_drift() {
    let pots = PotentialSet::preset("mtB_five", N).unwrap();
    let phi = TorusField::ground_state(1, N);
    let sched =
        ControlSchedule::constant(pots.width(), 1.0, pots.stationary_control(1.0, 2).unwrap())
            .unwrap();
    let traj = solver::solve_nhe(
        &phi,
        &sched,
        &pots,
        &SolverOptions::new(1.0, 2).with_record(Record::EveryStep),
    )
    .unwrap();
    let drift = traj
        .states
        .iter()
        .map(|s| s.max_coeff_diff(&phi))
        .fold(0.0, f64::max);
    assert!(drift <= 1e-8, "drift {drift:e}");
}
