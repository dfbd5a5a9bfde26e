//! One runner per experiment kind. Each writes `config.toml` (the resolved
//! config), `summary.json` and its CSV/SVG artifacts into the output
//! directory, and returns the summary.

use crate::config::{ControlSpec, ExperimentConfig, Kind, SteerMode};
use crate::formula;
use crate::plot::{write_svg, Chart, Series};
use anyhow::{bail, Context, Result};
use bilheat_core::exact::{self, ExactRun};
use bilheat_core::moment::{self, MomentOptions};
use bilheat_core::saturation::{self, GeneratorSet};
use bilheat_core::solver::{self, Record};
use bilheat_core::{ControlSchedule, Error, PotentialSet, TorusField};
use serde_json::{json, Value};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub struct Run {
    pub kind: Kind,
    pub out: PathBuf,
    pub summary: Value,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))
}

fn write_rows(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn state(cfg: &ExperimentConfig, field: &str, src: &str) -> Result<TorusField> {
    formula::field(src, cfg.pde.dim, cfg.pde.n).with_context(|| field.to_string())
}

pub fn run(kind: Kind, cfg: &ExperimentConfig) -> Result<Run> {
    cfg.validate(kind)?;
    let out = cfg.output.dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut resolved = cfg.clone();
    resolved.kind = Some(kind);
    std::fs::write(out.join("config.toml"), resolved.to_toml()?)?;
    let body = match kind {
        Kind::Simulate => simulate(cfg, &out),
        Kind::ApproxSteer => approx_steer(cfg, &out),
        Kind::ExactSteer => exact_steer(cfg, &out),
        Kind::MomentSolve => moment_solve(cfg, &out),
        Kind::LimitExperiment => limit_experiment(cfg, &out),
        Kind::DensityCheck => density_check(cfg),
        Kind::Constants => constants(cfg, &out),
        Kind::AuditPotentials => audit_potentials(cfg, &out),
    }
    .with_context(|| format!("{} failed", kind.name()))?;
    let summary = json!({
        "kind": kind.name(),
        "config": serde_json::to_value(&resolved)?,
        "result": body,
    });
    write_json(&out, "summary.json", &summary)?;
    Ok(Run { kind, out, summary })
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let pots = cfg.potentials()?;
    let s = &cfg.simulate;
    let psi0 = state(cfg, "simulate.initial", &s.initial)?;
    let u = match &s.control {
        ControlSpec::Named(n) if n == "free" => vec![0.0; pots.width()],
        ControlSpec::Named(_) => pots
            .stationary_control(cfg.pde.kappa, cfg.pde.p)
            .context("simulate.control")?,
        ControlSpec::Vector(v) => {
            if v.len() != pots.width() {
                bail!(
                    "simulate.control: expected {} components, got {}",
                    pots.width(),
                    v.len()
                );
            }
            v.clone()
        }
    };
    let sched = ControlSchedule::constant(pots.width(), s.horizon, u.clone())?;
    let times: Vec<f64> = (1..s.samples)
        .map(|j| s.horizon * j as f64 / s.samples as f64)
        .collect();
    let opts = cfg.solver_options().with_record(Record::Times(times));
    let traj = solver::solve_nhe(&psi0, &sched, &pots, &opts)?;
    traj.write_csv(create(out, "trajectory.csv")?)?;
    traj.final_state()
        .write_csv(create(out, "final_state.csv")?)?;
    let h1: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.hs_log)
        .map(|(t, h)| (*t, h[1]))
        .collect();
    write_svg(
        &out.join("norms.svg"),
        &Chart {
            title: "H1 norm of the state",
            x_label: "t",
            y_label: "|psi|_H1",
            log_x: false,
            log_y: false,
        },
        &[Series::new("H1", h1)],
    )?;
    Ok(json!({
        "control": u,
        "final_time": traj.final_time(),
        "final_h1": traj.final_state().hs_norm(1),
        "min_grid_value": traj.min_grid.iter().copied().fold(f64::INFINITY, f64::min),
        "steps": traj.steps,
        "blowup": traj.blowup.map(|b| json!({"time": b.time, "norm": b.norm})),
    }))
}

fn approx_steer(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let pots = cfg.potentials()?;
    let a = &cfg.approx_steer;
    let psi0 = state(cfg, "approx_steer.initial", &a.initial)?;
    let opts = cfg.solver_options();
    let (schedule, target, fits, budget) = match a.mode {
        SteerMode::Null => {
            let sched = saturation::null_steer(&psi0, a.eps, a.horizon, a.norms[0], &pots, &opts)?;
            (
                sched,
                TorusField::zeros(cfg.pde.dim, cfg.pde.n),
                Vec::new(),
                None,
            )
        }
        SteerMode::Positive | SteerMode::SameSign => {
            let psi1 = state(cfg, "approx_steer.target", &a.target)?;
            let outcome = if a.mode == SteerMode::Positive {
                saturation::approx_steer_positive(
                    &psi0, &psi1, a.eps, a.horizon, &pots, &opts, &a.steer, &a.norms,
                )?
            } else {
                saturation::approx_steer_same_sign(
                    &psi0, &psi1, a.eps, a.horizon, &pots, &opts, &a.steer,
                )?
            };
            (
                outcome.schedule,
                psi1,
                outcome.fit_residuals,
                outcome.budget,
            )
        }
    };
    let sim_opts = opts
        .clone()
        .with_formulation(bilheat_core::Formulation::Auto)
        .with_record(Record::Nodes);
    let traj = solver::solve_nhe(&psi0, &schedule, &pots, &sim_opts)?.completed()?;
    let final_state = traj.final_state().clone();
    schedule.write_csv(create(out, "schedule.csv")?)?;
    final_state.write_csv(create(out, "final_state.csv")?)?;
    let dist: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, s)| (*t, (s - &target).hs_norm(a.norms[0])))
        .collect();
    write_rows(
        out,
        "distance.csv",
        &["t", "distance"],
        dist.iter().map(|(t, d)| vec![*t, *d]),
    )?;
    write_svg(
        &out.join("distance.svg"),
        &Chart {
            title: "distance to the target",
            x_label: "t",
            y_label: "|psi - psi1|",
            log_x: false,
            log_y: true,
        },
        &[Series::new(format!("H{}", a.norms[0]), dist)],
    )?;
    let errors: Vec<Value> = a
        .norms
        .iter()
        .map(|&s| json!({"s": s, "error": (&final_state - &target).hs_norm(s)}))
        .collect();
    Ok(json!({
        "mode": a.mode,
        "duration": schedule.duration(),
        "segments": schedule.segments().len(),
        "errors": errors,
        "fit_residuals": fits,
        "budget": budget,
    }))
}

fn history_json(run: &ExactRun) -> Value {
    serde_json::to_value(&run.history).unwrap_or(Value::Null)
}

fn write_contraction(out: &Path, initial: f64, history: &[exact::ExactSteerState]) -> Result<()> {
    let mut pts = vec![(0.0, initial)];
    pts.extend(history.iter().map(|s| (s.n as f64, s.y_h1)));
    let bound: Vec<(f64, f64)> = history.iter().map(|s| (s.n as f64, s.bound_quad)).collect();
    write_svg(
        &out.join("contraction.svg"),
        &Chart {
            title: "exact steering residual",
            x_label: "n",
            y_label: "|y_n|_H1",
            log_x: false,
            log_y: true,
        },
        &[
            Series::new("measured", pts),
            Series::new("K(T_n)|y_(n-1)|^2", bound),
        ],
    )
}

fn write_history(out: &Path, history: &[exact::ExactSteerState]) -> Result<()> {
    exact::write_history_csv(history, create(out, "history.csv")?)?;
    Ok(())
}

fn exact_steer(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let pots = cfg.potentials()?;
    let e = &cfg.exact_steer;
    let psi0 = state(cfg, "exact_steer.initial", &e.initial)?;
    let ecfg = cfg.exact_config();
    if e.global {
        let steer = cfg.approx_steer.steer.clone();
        let g = exact::global_exact_pipeline(
            &psi0,
            e.horizon,
            &pots,
            &ecfg,
            &steer,
            e.entry_radius,
            cfg.seed,
        )?;
        write_history(out, &g.exact.history)?;
        write_contraction(out, g.exact.initial_h1, &g.exact.history)?;
        g.schedule.write_csv(create(out, "schedule.csv")?)?;
        g.final_state.write_csv(create(out, "final_state.csv")?)?;
        return Ok(json!({
            "global": true,
            "entry_radius": g.entry_radius,
            "r_t": g.r_t,
            "handoff_distance": g.handoff_distance,
            "final_error_h1": g.final_error,
            "negated": g.negated,
            "history": history_json(&g.exact),
        }));
    }
    let initial = exact::distance_to_ground(&psi0);
    match exact::exact_steer(&psi0, e.horizon, &pots, &ecfg, None) {
        Ok(run) => {
            write_history(out, &run.history)?;
            write_contraction(out, run.initial_h1, &run.history)?;
            run.schedule.write_csv(create(out, "schedule.csv")?)?;
            run.final_state.write_csv(create(out, "final_state.csv")?)?;
            let report = exact::control_norm_report(&run);
            Ok(json!({
                "global": false,
                "initial_h1": run.initial_h1,
                "final_h1": run.final_residual(),
                "converged": run.final_residual() <= e.stop_tol,
                "grid": run.grid,
                "constants": run.constants,
                "control_norms": report,
                "history": history_json(&run),
            }))
        }
        Err(Error::Contraction {
            step,
            previous,
            current,
            history,
        }) => {
            // keep the diagnostics of the aborted run on disk
            write_history(out, &history)?;
            write_contraction(out, initial, &history)?;
            let summary = json!({
                "kind": Kind::ExactSteer.name(),
                "config": serde_json::to_value(cfg)?,
                "global": false,
                "initial_h1": initial,
                "aborted_at": step,
                "previous": previous,
                "current": current,
                "history": serde_json::to_value(&history)?,
            });
            write_json(out, "summary.json", &summary)?;
            bail!("contraction failure at step {step}: |y_n| = {current:e} > |y_(n-1)| = {previous:e}; diagnostics in {}", out.display())
        }
        Err(err) => Err(err.into()),
    }
}

fn moment_solve(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let pots = cfg.potentials()?;
    let m = &cfg.moment_solve;
    let xi0 = state(cfg, "moment_solve.initial", &m.initial)?;
    let prob = moment::compute_targets(
        &xi0,
        &pots,
        cfg.pde.kappa,
        cfg.pde.p,
        m.horizon,
        m.truncation,
    )?;
    let sol = moment::solve_moment(&prob, &m.options)?;
    let null_report = moment::verify_null(&xi0, &sol, &prob, &pots)?;
    write_rows(
        out,
        "controls.csv",
        &["t", "v1", "v2"],
        sol.times
            .iter()
            .zip(&sol.v1)
            .zip(&sol.v2)
            .map(|((t, a), b)| vec![*t, *a, *b]),
    )?;
    write_svg(
        &out.join("controls.svg"),
        &Chart {
            title: "moment controls",
            x_label: "t",
            y_label: "v",
            log_x: false,
            log_y: false,
        },
        &[
            Series::new(
                "v1",
                sol.times
                    .iter()
                    .copied()
                    .zip(sol.v1.iter().copied())
                    .collect(),
            ),
            Series::new(
                "v2",
                sol.times
                    .iter()
                    .copied()
                    .zip(sol.v2.iter().copied())
                    .collect(),
            ),
        ],
    )?;
    let mut result = json!({
        "problem": prob,
        "h1_norm": sol.h1_norm(),
        "max_residual": sol.max_residual(),
        "cos_weight": sol.cos_weight,
        "sin_weight": sol.sin_weight,
        "null": null_report,
    });
    if !m.cost_horizons.is_empty() {
        let ens = moment::basis_ensemble(cfg.pde.n, m.truncation);
        let opts = MomentOptions {
            tol: m.cost_tol,
            ..m.options.clone()
        };
        let probe = moment::control_cost_probe(
            &m.cost_horizons,
            &ens,
            &pots,
            cfg.pde.kappa,
            cfg.pde.p,
            m.truncation,
            &opts,
        )?;
        write_rows(
            out,
            "cost.csv",
            &["T", "cost"],
            probe.rows.iter().map(|r| vec![r.horizon, r.cost]),
        )?;
        write_svg(
            &out.join("cost.svg"),
            &Chart {
                title: "control cost against 1/T",
                x_label: "1/T",
                y_label: "ln N(T)",
                log_x: false,
                log_y: false,
            },
            &[Series::new(
                "measured",
                probe
                    .rows
                    .iter()
                    .map(|r| (1.0 / r.horizon, r.cost.ln()))
                    .collect(),
            )],
        )?;
        result["cost_probe"] = serde_json::to_value(&probe)?;
    }
    Ok(result)
}

fn limit_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let pots = cfg.potentials()?;
    let l = &cfg.limit_experiment;
    let psi0 = state(cfg, "limit_experiment.initial", &l.initial)?;
    let phi = state(cfg, "limit_experiment.phi", &l.phi)?;
    let shift = if l.shift.is_empty() {
        vec![0.0; pots.width() - 2]
    } else {
        l.shift.clone()
    };
    if shift.len() != pots.width() - 2 {
        bail!(
            "limit_experiment.shift: expected {} components, got {}",
            pots.width() - 2,
            shift.len()
        );
    }
    let opts = cfg.solver_options();
    let exp = saturation::conjugated_limit_experiment(
        &psi0, &phi, &shift, &l.deltas, &pots, &opts, l.s, l.route,
    )?;
    write_rows(
        out,
        "errors.csv",
        &["delta", "error", "blowup", "steps"],
        exp.rows
            .iter()
            .map(|r| vec![r.delta, r.error, r.blowup as u8 as f64, r.steps as f64]),
    )?;
    write_svg(
        &out.join("errors.svg"),
        &Chart {
            title: "conjugated dynamics against the limit",
            x_label: "delta",
            y_label: "error",
            log_x: true,
            log_y: true,
        },
        &[Series::new(
            format!("H{}", l.s),
            exp.rows
                .iter()
                .filter(|r| !r.blowup)
                .map(|r| (r.delta, r.error))
                .collect(),
        )],
    )?;
    Ok(serde_json::to_value(&exp)?)
}

fn density_check(cfg: &ExperimentConfig) -> Result<Value> {
    let gens = if cfg.density_check.generators.is_empty() {
        GeneratorSet::standard(cfg.pde.dim)
    } else {
        GeneratorSet::new(cfg.pde.dim, cfg.density_check.generators.clone())
            .context("density_check.generators")?
    };
    let verdict = saturation::density_check(&gens);
    Ok(json!({
        "generators": gens,
        "passed": verdict.passed(),
        "verdict": verdict,
    }))
}

fn constants(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let c = &cfg.constants;
    let c_q = match c.c_q {
        Some(v) => v,
        None => cfg.potentials()?.c_q(),
    };
    let pack = moment::constants_pack(cfg.pde.kappa, cfg.pde.p, c.nu, c.t0, c_q, c.horizon);
    let table: Vec<Vec<f64>> = c
        .taus
        .iter()
        .map(|&t| vec![t, pack.k_of(t), (pack.gamma0 / t).exp(), pack.n_of(t)])
        .collect();
    write_rows(
        out,
        "constants.csv",
        &["tau", "K", "exp_gamma0_over_tau", "N"],
        table.iter().cloned(),
    )?;
    write_svg(
        &out.join("constants.svg"),
        &Chart {
            title: "K(tau) against exp(Gamma0/tau)",
            x_label: "tau",
            y_label: "value",
            log_x: false,
            log_y: true,
        },
        &[
            Series::new("K(tau)", table.iter().map(|r| (r[0], r[1])).collect()),
            Series::new(
                "exp(Gamma0/tau)",
                table.iter().map(|r| (r[0], r[2])).collect(),
            ),
        ],
    )?;
    Ok(json!({
        "pack": pack,
        "control_bound": pack.control_bound(),
        "k_below_exp_bound": table.iter().all(|r| r[1] <= r[2]),
    }))
}

fn audit_potentials(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let pots: PotentialSet = cfg.potentials()?;
    let k_max = cfg.audit_potentials.truncation;
    let report = moment::assumption2_audit(&pots, k_max)?;
    let rows: Vec<Vec<f64>> = (1..=k_max)
        .map(|k| {
            let q1 = bilheat_core::potentials::mu_quadrature(1, bilheat_core::Basis::Cos(k));
            let q2 = bilheat_core::potentials::mu_quadrature(2, bilheat_core::Basis::Sin(k));
            let c1 = bilheat_core::potentials::mu_closed_form(1, k).unwrap_or(f64::NAN);
            let c2 = bilheat_core::potentials::mu_closed_form(2, k).unwrap_or(f64::NAN);
            vec![k as f64, q1, c1, q2, c2]
        })
        .collect();
    write_rows(
        out,
        "coefficients.csv",
        &[
            "k",
            "mu1_quadrature",
            "mu1_closed",
            "mu2_quadrature",
            "mu2_closed",
        ],
        rows.iter().cloned(),
    )?;
    write_svg(
        &out.join("coefficients.svg"),
        &Chart {
            title: "potential coefficients",
            x_label: "k",
            y_label: "|coefficient|",
            log_x: true,
            log_y: true,
        },
        &[
            Series::new("mu1 cos", rows.iter().map(|r| (r[0], r[1].abs())).collect()),
            Series::new("mu2 sin", rows.iter().map(|r| (r[0], r[3].abs())).collect()),
        ],
    )?;
    Ok(serde_json::to_value(&report)?)
}
