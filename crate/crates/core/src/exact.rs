//! Exact steering to the ground state by stacking moment-problem controls
//! on windows T_n = T₁/n², each nulling the linearization of the current
//! residual; the nonlinear defect shrinks quadratically from window to
//! window.

use crate::error::{Error, Result};
use crate::field::{ground_value, TorusField};
use crate::moment::{self, constants_pack, ConstantPack, MomentOptions};
use crate::potentials::PotentialSet;
use crate::saturation::{self, SteerConfig};
use crate::schedule::{compensated_sum, ControlSchedule};
use crate::solver::{self, Formulation, Record, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

#[derive(Debug, Clone, Serialize)]
pub struct TimeGrid {
    pub t_f: f64,
    pub t1: f64,
    /// T_j = T₁/j², j = 1..=n
    pub windows: Vec<f64>,
    /// τ_j = Σ_{i≤j} T_i (compensated), τ₀ = 0 first.
    pub taus: Vec<f64>,
    /// T₁(π²/6 − Σ_{j≤n} 1/j²)
    pub tail: f64,
}

/// T_f = min{T, π²/6, π²T₀/6}, T₁ = 6T_f/π², T_j = T₁/j².
pub fn time_grid(t: f64, t0: f64, n: usize) -> Result<TimeGrid> {
    if !(t > 0.0) || !(t0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "T = {t} and T₀ = {t0} must be positive"
        )));
    }
    let zeta2 = PI * PI / 6.0;
    let t_f = t.min(zeta2).min(zeta2 * t0);
    let t1 = t_f / zeta2;
    let windows: Vec<f64> = (1..=n).map(|j| t1 / (j * j) as f64).collect();
    let mut taus = vec![0.0];
    for j in 1..=n {
        taus.push(compensated_sum(windows[..j].iter().copied()));
    }
    let partial = compensated_sum((1..=n).map(|j| 1.0 / (j * j) as f64));
    let tail = t1 * (zeta2 - partial);
    let total = taus[n] + tail;
    if (total - t_f).abs() > 1e-10 * t_f.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "window sum {total} misses T_f = {t_f}"
        )));
    }
    Ok(TimeGrid {
        t_f,
        t1,
        windows,
        taus,
        tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExactConfig {
    pub kappa: f64,
    pub p: u32,
    pub truncation: usize,
    pub n_max: usize,
    pub stop_tol: f64,
    pub t0: f64,
    /// Control-cost exponent; fitted from the moment solver when absent.
    pub nu: Option<f64>,
    pub max_dt: f64,
    /// Window moment solves; non-strict by default so short windows return
    /// their best residual instead of failing.
    pub moment: MomentOptions,
    /// Contraction is enforced once ‖y‖_{H¹} is below this.
    pub local_threshold: f64,
    /// Windows whose direct solve would need more steps than this are
    /// rejected before stepping.
    pub max_window_steps: f64,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            kappa: 1.0,
            p: 2,
            truncation: 12,
            n_max: 8,
            stop_tol: 1e-8,
            t0: 1.0,
            nu: None,
            max_dt: 5e-4,
            moment: MomentOptions {
                strict: false,
                ..MomentOptions::default()
            },
            local_threshold: 1e-2,
            max_window_steps: 2e6,
        }
    }
}

impl ExactConfig {
    fn solver_options(&self) -> SolverOptions {
        SolverOptions::new(self.kappa, self.p)
            .with_formulation(Formulation::Direct)
            .with_max_dt(self.max_dt)
    }
}

/// ν̂ from the control-cost probe on T ∈ {0.2, 0.3, …, 1.0} over the basis
/// ensemble up to K.
pub fn fitted_nu(pots: &PotentialSet, kappa: f64, p: u32, truncation: usize) -> Result<f64> {
    let horizons: Vec<f64> = (2..=10).map(|j| j as f64 / 10.0).collect();
    let opts = MomentOptions {
        tol: 1e-6,
        ..MomentOptions::default()
    };
    let ens = moment::basis_ensemble(pots.modes_per_axis(), truncation);
    Ok(moment::control_cost_probe(&horizons, &ens, pots, kappa, p, truncation, &opts)?.nu_hat)
}

/// Constants for a configuration and horizon; ν is fitted when unset.
pub fn constants_for(pots: &PotentialSet, cfg: &ExactConfig, horizon: f64) -> Result<ConstantPack> {
    let nu = match cfg.nu {
        Some(v) => v,
        None => fitted_nu(pots, cfg.kappa, cfg.p, cfg.truncation)?,
    };
    Ok(constants_pack(
        cfg.kappa,
        cfg.p,
        nu,
        cfg.t0,
        pots.c_q(),
        horizon,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactSteerState {
    pub n: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub window: f64,
    /// ‖y_{n−1}‖_{H¹}
    pub y_prev_h1: f64,
    /// ‖y_n‖_{H¹}, ‖y_n‖_{L²}
    pub y_h1: f64,
    pub y_l2: f64,
    /// ‖(v₁, v₂)‖_{H¹} on the window.
    pub u_h1: f64,
    pub k_tn: f64,
    /// K(T_n)‖y_{n−1}‖²
    pub bound_quad: f64,
    /// sup over the window of ‖y − ξ‖_{H¹}, ξ the linearized solution.
    pub w_sup: f64,
    /// A₄(T_n, ‖y_{n−1}‖)‖y_{n−1}‖² with N the larger of e^{ν/T_n} and the
    /// observed control-to-data ratio.
    pub a4_bound: f64,
    pub observed_cost: f64,
    /// ‖ξ(τ_n)‖/‖ξ(τ_{n−1})‖ of the linearization under the window control.
    pub linear_ratio: f64,
    /// ln of Π_{j≤n} K(T_j)^{2^{n−j}}‖y₀‖^{2^n}.
    pub induction_log_bound: f64,
}

#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub schedule: ControlSchedule,
    pub final_state: TorusField,
    pub u_h1: f64,
    pub w_sup: f64,
    pub a4_bound: f64,
    pub observed_cost: f64,
    pub linear_ratio: f64,
}

fn finite_or_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

/// One window of length `window` from ψ(τ) = ψ: moment controls for the
/// linearization with ξ₀ = ψ − Φ, the nonlinear run, and the measured
/// defect w = y − ξ against the A₄ bound.
#[allow(clippy::too_many_arguments)]
pub fn run_window(
    psi: &TorusField,
    tau: f64,
    window: f64,
    pots: &PotentialSet,
    cfg: &ExactConfig,
    consts: &ConstantPack,
    u_kappa: &[f64],
) -> Result<WindowOutcome> {
    let phi = TorusField::ground_state(1, psi.modes_per_axis());
    let y0 = psi - &phi;
    let y0_h1 = y0.hs_norm(1);
    let prob = moment::compute_targets(&y0, pots, cfg.kappa, cfg.p, window, cfg.truncation)?;
    let sol = moment::solve_moment(&prob, &cfg.moment)?;
    let schedule = sol.schedule(u_kappa)?;
    let v_only = sol.schedule(&vec![0.0; pots.width()])?;
    let opts = cfg.solver_options();
    let sups = pots.sup_norms();
    let w = pots.width();
    let base_sup: f64 = u_kappa.iter().zip(sups).map(|(u, q)| u.abs() * q).sum();
    let peak = sol
        .v1
        .iter()
        .zip(&sol.v2)
        .map(|(a, b)| base_sup + a.abs() * sups[w - 2] + b.abs() * sups[w - 1])
        .fold(0.0, f64::max);
    let steps = window * (1.0 + peak) / opts.control_step_scale;
    if steps > cfg.max_window_steps {
        return Err(Error::Budget(format!(
            "window of length {window:e} needs about {steps:e} steps (control peak {peak:e})"
        )));
    }
    let nonlinear = solver::solve_nhe_from(psi, &schedule, pots, &opts, tau)?.completed()?;
    let linear =
        solver::solve_linearized(&y0, &v_only, pots, cfg.kappa, cfg.p, &Record::Nodes, tau)?;
    let mut w_sup: f64 = 0.0;
    let mut j = 0;
    for (t, xi) in linear.times.iter().zip(&linear.states) {
        while j + 1 < nonlinear.times.len() && nonlinear.times[j] < t - 1e-12 * t.abs().max(1.0) {
            j += 1;
        }
        if (nonlinear.times[j] - t).abs() <= 1e-12 * t.abs().max(1.0) {
            let y = &nonlinear.states[j] - &phi;
            w_sup = w_sup.max((&y - xi).hs_norm(1));
        }
    }
    let observed_cost = if y0_h1 > 0.0 {
        sol.h1_norm() / y0_h1
    } else {
        0.0
    };
    let n_eff = consts.n_of(window).max(observed_cost);
    let a4_bound = if y0_h1 == 0.0 {
        0.0
    } else {
        finite_or_inf(consts.a4(window, y0_h1, Some(n_eff)) * y0_h1 * y0_h1)
    };
    let linear_ratio = if y0.l2_norm() > 0.0 {
        linear.final_state().l2_norm() / y0.l2_norm()
    } else {
        0.0
    };
    Ok(WindowOutcome {
        schedule,
        final_state: nonlinear.final_state().clone(),
        u_h1: sol.h1_norm(),
        w_sup,
        a4_bound,
        observed_cost,
        linear_ratio,
    })
}

/// (sup ‖w‖_{H¹}, A₄‖y₀‖²) for a single window started at Φ + y₀.
pub fn residual_bound_audit(
    y0: &TorusField,
    window: f64,
    pots: &PotentialSet,
    cfg: &ExactConfig,
    consts: &ConstantPack,
) -> Result<(f64, f64)> {
    let u_kappa = pots.stationary_control(cfg.kappa, cfg.p)?;
    let psi = y0 + &TorusField::ground_state(1, y0.modes_per_axis());
    let w = run_window(&psi, 0.0, window, pots, cfg, consts, &u_kappa)?;
    Ok((w.w_sup, w.a4_bound))
}

#[derive(Debug, Clone)]
pub struct ExactRun {
    pub schedule: ControlSchedule,
    pub history: Vec<ExactSteerState>,
    pub final_state: TorusField,
    pub initial_h1: f64,
    pub grid: TimeGrid,
    pub constants: ConstantPack,
}

impl ExactRun {
    pub fn final_residual(&self) -> f64 {
        self.history.last().map_or(self.initial_h1, |s| s.y_h1)
    }

    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        write_history_csv(&self.history, w)
    }
}

/// `n,tau_n,T_n,y_h1,y_l2,u_h1,K_Tn,bound_quad,w_sup,A4_bound`
pub fn write_history_csv<W: Write>(history: &[ExactSteerState], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "n",
        "tau_n",
        "T_n",
        "y_h1",
        "y_l2",
        "u_h1",
        "K_Tn",
        "bound_quad",
        "w_sup",
        "A4_bound",
    ])?;
    for s in history {
        wr.write_record([
            s.n.to_string(),
            format!("{:e}", s.tau_end),
            format!("{:e}", s.window),
            format!("{:e}", s.y_h1),
            format!("{:e}", s.y_l2),
            format!("{:e}", s.u_h1),
            format!("{:e}", s.k_tn),
            format!("{:e}", s.bound_quad),
            format!("{:e}", s.w_sup),
            format!("{:e}", s.a4_bound),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Stacked exact steering of ψ₀ to Φ on [0, T_f]: window n nulls the
/// linearization of y_{n−1} = ψ(τ_{n−1}) − Φ with a moment control added
/// to the stationary control u_κ. Stops when ‖y_n‖_{H¹} ≤ stop_tol or
/// after n_max windows.
pub fn exact_steer(
    psi0: &TorusField,
    t: f64,
    pots: &PotentialSet,
    cfg: &ExactConfig,
    consts: Option<&ConstantPack>,
) -> Result<ExactRun> {
    if psi0.dim() != 1 || pots.dim() != 1 {
        return Err(Error::InvalidInput(
            "exact steering is implemented on T^1".into(),
        ));
    }
    if cfg.kappa < 0.0 || cfg.p % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "need κ ≥ 0 and even p, got κ = {}, p = {}",
            cfg.kappa, cfg.p
        )));
    }
    let grid = time_grid(t, cfg.t0, cfg.n_max)?;
    let consts = match consts {
        Some(c) => c.clone(),
        None => constants_for(pots, cfg, t)?,
    };
    let u_kappa = pots.stationary_control(cfg.kappa, cfg.p)?;
    let phi = TorusField::ground_state(1, psi0.modes_per_axis());
    let initial_h1 = (psi0 - &phi).hs_norm(1);
    let mut schedule = ControlSchedule::new(pots.width());
    let mut history: Vec<ExactSteerState> = Vec::new();
    let mut psi = psi0.clone();
    if initial_h1 <= cfg.stop_tol {
        schedule.push_constant(grid.t_f, u_kappa.clone())?;
        let opts = cfg.solver_options();
        let final_state = solver::evolve(psi0, &schedule, pots, &opts)?;
        return Ok(ExactRun {
            schedule,
            history,
            final_state,
            initial_h1,
            grid,
            constants: consts,
        });
    }
    let mut y_prev = initial_h1;
    let mut log_bound = initial_h1.ln();
    for n in 1..=cfg.n_max {
        let window = grid.windows[n - 1];
        let tau = grid.taus[n - 1];
        let out = run_window(&psi, tau, window, pots, cfg, &consts, &u_kappa)?;
        let y = &out.final_state - &phi;
        let y_h1 = y.hs_norm(1);
        let k_tn = finite_or_inf(consts.k_of(window));
        log_bound = 2.0 * log_bound + k_tn.ln();
        let state = ExactSteerState {
            n,
            tau_start: tau,
            tau_end: grid.taus[n],
            window,
            y_prev_h1: y_prev,
            y_h1,
            y_l2: y.l2_norm(),
            u_h1: out.u_h1,
            k_tn,
            bound_quad: finite_or_inf(k_tn * y_prev * y_prev),
            w_sup: out.w_sup,
            a4_bound: out.a4_bound,
            observed_cost: out.observed_cost,
            linear_ratio: out.linear_ratio,
            induction_log_bound: log_bound,
        };
        schedule.extend(&out.schedule)?;
        history.push(state);
        if out.w_sup > out.a4_bound {
            return Err(Error::BoundViolation {
                step: n,
                measured: out.w_sup,
                bound: out.a4_bound,
            });
        }
        if y_h1 > y_prev && y_prev < cfg.local_threshold {
            return Err(Error::Contraction {
                step: n,
                previous: y_prev,
                current: y_h1,
                history,
            });
        }
        psi = out.final_state;
        y_prev = y_h1;
        if y_h1 <= cfg.stop_tol {
            break;
        }
    }
    Ok(ExactRun {
        schedule,
        history,
        final_state: psi,
        initial_h1,
        grid,
        constants: consts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlNormReport {
    /// (Σ_n ‖(v₁,v₂)‖²_{H¹(window n)})^{1/2}
    pub total_h1: f64,
    pub bound: f64,
    /// The comparison is meaningful only when Γ₀ > ν.
    pub asserted: bool,
    pub within_bound: bool,
    /// ‖u^{n+1}‖ < ‖u^n‖ for every n ≥ 2 present.
    pub tail_decreasing: bool,
    /// max_n ‖u^n‖/(N(T_n)‖y_{n−1}‖)
    pub cost_ratio: f64,
}

pub fn control_norm_report(run: &ExactRun) -> ControlNormReport {
    let c = &run.constants;
    let total_h1 = run
        .history
        .iter()
        .map(|s| s.u_h1 * s.u_h1)
        .sum::<f64>()
        .sqrt();
    let bound = c.control_bound();
    let asserted = c.gamma0 > c.nu;
    let tail_decreasing = run
        .history
        .windows(2)
        .filter(|w| w[0].n >= 2)
        .all(|w| w[1].u_h1 < w[0].u_h1);
    let cost_ratio = run
        .history
        .iter()
        .filter(|s| s.y_prev_h1 > 0.0)
        .map(|s| s.u_h1 / (c.n_of(s.window) * s.y_prev_h1))
        .fold(0.0, f64::max);
    ControlNormReport {
        total_h1,
        bound,
        asserted,
        within_bound: total_h1 <= bound,
        tail_decreasing,
        cost_ratio,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryRow {
    pub radius: f64,
    pub contracted: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryBall {
    /// Largest radius at which every trial contracted (0 if none).
    pub radius: f64,
    pub rows: Vec<EntryRow>,
    pub seed: u64,
}

/// Random perturbations y₀ of H¹ norm r over the modes c₀, c_k, s_k
/// (k ≤ 4), `trials` per radius; a trial passes when the first window
/// of exact steering contracts. Trial i uses ChaCha8 seeded with
/// seed + i.
#[allow(clippy::too_many_arguments)]
pub fn entry_ball_sweep(
    radii: &[f64],
    trials: usize,
    seed: u64,
    t: f64,
    pots: &PotentialSet,
    cfg: &ExactConfig,
    consts: &ConstantPack,
) -> Result<EntryBall> {
    let n = pots.modes_per_axis();
    let phi = TorusField::ground_state(1, n);
    let probe_cfg = ExactConfig {
        n_max: 1,
        local_threshold: f64::INFINITY,
        ..cfg.clone()
    };
    let mut sorted = radii.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut rows = Vec::new();
    for &r in &sorted {
        let contracted = (0..trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                let mut modes: Vec<(bool, usize, f64)> = vec![(true, 0, rng.gen_range(-1.0..1.0))];
                for k in 1..=4 {
                    modes.push((true, k, rng.gen_range(-1.0..1.0)));
                    modes.push((false, k, rng.gen_range(-1.0..1.0)));
                }
                let y = TorusField::from_fn(1, n, |x| {
                    modes
                        .iter()
                        .map(|&(c, k, a)| {
                            let arg = k as f64 * x[0];
                            a * if c { arg.cos() } else { arg.sin() }
                        })
                        .sum()
                });
                let norm = y.hs_norm(1);
                let y = if norm > 0.0 { y.scaled(r / norm) } else { y };
                let psi0 = &phi + &y;
                match exact_steer(&psi0, t, pots, &probe_cfg, Some(consts)) {
                    Ok(run) => {
                        let mut prev = run.initial_h1;
                        run.history.iter().all(|s| {
                            let ok = s.y_h1 < prev;
                            prev = s.y_h1;
                            ok
                        })
                    }
                    Err(_) => false,
                }
            })
            .filter(|ok| *ok)
            .count();
        rows.push(EntryRow {
            radius: r,
            contracted,
            trials,
        });
    }
    let radius = rows
        .iter()
        .filter(|row| row.contracted == row.trials)
        .map(|row| row.radius)
        .fold(0.0, f64::max);
    Ok(EntryBall { radius, rows, seed })
}

pub fn default_entry_radii() -> Vec<f64> {
    vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5]
}

#[derive(Debug, Clone)]
pub struct GlobalRun {
    pub schedule: ControlSchedule,
    pub final_state: TorusField,
    /// ‖ψ(T/2) − Φ‖_{H¹} after the approximate phase.
    pub handoff_distance: f64,
    pub entry_radius: f64,
    /// R_T from the configured constants, reported alongside.
    pub r_t: f64,
    pub exact: ExactRun,
    /// ‖ψ(T) − sΦ‖_{H¹}, s the sign of ψ₀.
    pub final_error: f64,
    pub negated: bool,
}

/// Approximate steering of ψ₀ into the entry ball around Φ on [0, T/2],
/// exact steering on [T/2, T/2 + T_f], and the stationary control after
/// that. Negative data are handled through ψ ↦ −ψ (p even).
#[allow(clippy::too_many_arguments)]
pub fn global_exact_pipeline(
    psi0: &TorusField,
    t: f64,
    pots: &PotentialSet,
    cfg: &ExactConfig,
    steer: &SteerConfig,
    entry_radius: Option<f64>,
    seed: u64,
) -> Result<GlobalRun> {
    if psi0.dim() != 1 {
        return Err(Error::InvalidInput(
            "the global pipeline is implemented on T^1".into(),
        ));
    }
    let n = psi0.modes_per_axis();
    let (min, max) = (
        psi0.min_fine(4),
        psi0.grid_values()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max),
    );
    let negated = if min > 0.0 {
        false
    } else if max < 0.0 && cfg.p % 2 == 0 {
        true
    } else {
        return Err(Error::Positivity(format!(
            "initial state changes sign (min {min:e}, max {max:e})"
        )));
    };
    let start = if negated {
        psi0.scaled(-1.0)
    } else {
        psi0.clone()
    };
    let half = t / 2.0;
    let consts = constants_for(pots, cfg, half)?;
    let radius = match entry_radius {
        Some(r) => r,
        None if consts.r_t > 1e-12 => consts.r_t,
        None => {
            entry_ball_sweep(&default_entry_radii(), 20, seed, half, pots, cfg, &consts)?.radius
        }
    };
    if !(radius > 0.0) {
        return Err(Error::Budget(
            "no entry radius with reliable contraction".into(),
        ));
    }
    let phi = TorusField::ground_state(1, n);
    let opts = SolverOptions::new(cfg.kappa, cfg.p);
    let u_kappa = pots.stationary_control(cfg.kappa, cfg.p)?;
    let (mut schedule, handoff) = if (&start - &phi).hs_norm(1) < radius / 2.0 {
        let hold = ControlSchedule::constant(pots.width(), half, u_kappa.clone())?;
        let reached = solver::evolve(&start, &hold, pots, &opts)?;
        (hold, reached)
    } else {
        let phase1 = saturation::approx_steer_positive(
            &start,
            &phi,
            radius / 2.0,
            half,
            pots,
            &opts,
            steer,
            &[1],
        )
        .map_err(|e| {
            Error::Budget(format!(
                "approximate phase did not enter the ball of radius {radius:e}: {e}"
            ))
        })?;
        (phase1.schedule, phase1.final_state)
    };
    let handoff_distance = (&handoff - &phi).hs_norm(1);
    if handoff_distance >= radius {
        return Err(Error::Budget(format!(
            "approximate phase reached {handoff_distance:e}, outside the entry radius {radius:e}"
        )));
    }
    let exact = exact_steer(&handoff, half, pots, cfg, Some(&consts))?;
    schedule.extend(&exact.schedule)?;
    let used = schedule.duration();
    let mut final_state = exact.final_state.clone();
    if used < t {
        let rest = ControlSchedule::constant(pots.width(), t - used, u_kappa)?;
        final_state = solver::evolve(&final_state, &rest, pots, &cfg.solver_options())?;
        schedule.extend(&rest)?;
    }
    let final_error = (&final_state - &phi).hs_norm(1);
    if negated {
        final_state = final_state.scaled(-1.0);
    }
    Ok(GlobalRun {
        schedule,
        final_state,
        handoff_distance,
        entry_radius: radius,
        r_t: consts.r_t,
        exact,
        final_error,
        negated,
    })
}

/// ‖ψ − Φ‖_{H¹}.
pub fn distance_to_ground(psi: &TorusField) -> f64 {
    let phi = TorusField::constant(psi.dim(), psi.modes_per_axis(), ground_value(psi.dim()));
    (psi - &phi).hs_norm(1)
}
