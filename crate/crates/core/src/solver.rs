//! Exponential time differencing for ∂ψ = Δψ − κψ^{p+1} + ⟨u(t),Q⟩ψ and
//! mode-wise exact integration of its linearization around the ground state.
//!
//! Three state variables share one ETD2RK engine:
//! - `Direct`: ψ itself.
//! - `Log`: ζ = ln ψ for strictly positive states,
//!   ∂ζ = Δζ + |∇ζ|² − κe^{pζ} + ⟨u,Q⟩. The control enters additively, so
//!   large impulsive controls are integrated without step restriction and
//!   without the dynamic-range loss of e^{±aφ} factors.
//! - `Conjugated`: θ = e^{aφ}ψ for a fixed φ,
//!   ∂θ = Δθ − 2a∇φ·∇θ + (a²B(φ) − aΔφ + ⟨u,Q⟩)θ − κe^{−paφ}θ^{p+1}.

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{
    ground_value, hs_norm_coeffs, padded_size, wavenumber_squares, wavevector, TorusField,
};
use crate::potentials::PotentialSet;
use crate::schedule::{compensated_sum, ControlLaw, ControlSchedule};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    Direct,
    Log,
    /// Log when the initial state is strictly positive, Direct otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Record {
    /// Initial time, every control breakpoint and every segment end.
    #[default]
    Nodes,
    EveryStep,
    /// The initial time, the listed times (steps land on them exactly) and
    /// the final time.
    Times(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub kappa: f64,
    pub p: u32,
    pub max_dt: f64,
    pub min_steps_per_segment: usize,
    /// dt ≤ control_step_scale / (1 + sup|⟨u,Q⟩|) for the direct model.
    pub control_step_scale: f64,
    /// Step fraction of the explicit stiffness estimate (log and
    /// conjugated models).
    pub cfl: f64,
    pub blowup_threshold: f64,
    pub formulation: Formulation,
    pub record: Record,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kappa: 1.0,
            p: 2,
            max_dt: 1e-3,
            min_steps_per_segment: 32,
            control_step_scale: 0.1,
            cfl: 0.1,
            blowup_threshold: 1e8,
            formulation: Formulation::Direct,
            record: Record::Nodes,
        }
    }
}

impl SolverOptions {
    pub fn new(kappa: f64, p: u32) -> Self {
        SolverOptions {
            kappa,
            p,
            ..Default::default()
        }
    }

    pub fn with_record(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn with_formulation(mut self, f: Formulation) -> Self {
        self.formulation = f;
        self
    }

    pub fn with_max_dt(mut self, dt: f64) -> Self {
        self.max_dt = dt;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowUp {
    pub time: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<TorusField>,
    /// H^s norms for s = 0, 1, 3.
    pub hs_log: Vec<[f64; 3]>,
    pub min_grid: Vec<f64>,
    pub blowup: Option<BlowUp>,
    pub steps: usize,
}

impl Trajectory {
    fn new() -> Self {
        Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            hs_log: Vec::new(),
            min_grid: Vec::new(),
            blowup: None,
            steps: 0,
        }
    }

    fn push(&mut self, t: f64, state: TorusField) {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return;
            }
        }
        self.hs_log
            .push([state.hs_norm(0), state.hs_norm(1), state.hs_norm(3)]);
        self.min_grid.push(state.min_grid());
        self.times.push(t);
        self.states.push(state);
    }

    pub fn final_state(&self) -> &TorusField {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }

    pub fn final_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory has at least one state")
    }

    pub fn is_blowup(&self) -> bool {
        self.blowup.is_some()
    }

    /// Errors out when the run blew up.
    pub fn completed(self) -> Result<Trajectory> {
        match self.blowup {
            Some(b) => Err(Error::BlowUp {
                time: b.time,
                norm: b.norm,
            }),
            None => Ok(self),
        }
    }

    /// CSV `t,hs0,hs1,hs3,min_grid_value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "hs0", "hs1", "hs3", "min_grid_value"])?;
        for ((t, h), m) in self.times.iter().zip(&self.hs_log).zip(&self.min_grid) {
            wr.write_record([
                t.to_string(),
                h[0].to_string(),
                h[1].to_string(),
                h[2].to_string(),
                m.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// φ₁(z) = (e^z − 1)/z and φ₂(z) = (e^z − 1 − z)/z².
pub fn phi_functions(z: f64) -> (f64, f64) {
    if z.abs() < 0.1 {
        // Taylor series to z^7 is below round-off for |z| < 0.1
        let mut p1 = 0.0;
        let mut p2 = 0.0;
        let mut term = 1.0; // z^j / (j)!
        for j in 0..10 {
            p1 += term / (j + 1) as f64;
            p2 += term / ((j + 1) * (j + 2)) as f64;
            term *= z / (j + 1) as f64;
        }
        (p1, p2)
    } else {
        let em1 = z.exp_m1();
        (em1 / z, (em1 - z) / (z * z))
    }
}

enum Model {
    Direct,
    Log,
    Conjugated {
        a: f64,
        grad_phi: Vec<Vec<f64>>,
        potential: Vec<f64>,
        damping: Vec<f64>,
        grad_phi_max: f64,
    },
}

/// Pseudo-spectral right-hand side plus ETD2RK stepping.
pub(crate) struct Engine {
    dim: usize,
    n: usize,
    m: usize,
    kappa: f64,
    p: u32,
    k2: Vec<f64>,
    kvec: Vec<Vec<f64>>,
    map: Vec<Option<usize>>,
    pot_grid: Vec<Vec<f64>>,
    pot_sup: Vec<f64>,
    model: Model,
    big: Vec<C>,
    grid: Vec<f64>,
    grads: Vec<Vec<f64>>,
    vgrid: Vec<f64>,
    cache_dt: f64,
    e1: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    /// explicit stiffness estimate from the last right-hand side evaluation
    rate: f64,
}

impl Engine {
    fn base(pots: &PotentialSet, kappa: f64, p: u32, degree: usize, model: Model) -> Engine {
        let dim = pots.dim();
        let n = pots.modes_per_axis();
        let m = padded_size(n, degree.max(2));
        let k2 = wavenumber_squares(n, dim);
        let kvec = (0..dim)
            .map(|a| {
                (0..n.pow(dim as u32))
                    .map(|idx| wavevector(idx, n, dim)[a] as f64)
                    .collect()
            })
            .collect();
        let pot_grid = pots
            .components()
            .iter()
            .map(|q| q.grid_values_padded(m))
            .collect::<Vec<_>>();
        let pot_sup = pot_grid
            .iter()
            .zip(pots.sup_norms())
            .map(|(g, &s)| g.iter().fold(s, |acc, v| acc.max(v.abs())))
            .collect();
        let total_big = m.pow(dim as u32);
        Engine {
            dim,
            n,
            m,
            kappa,
            p,
            k2,
            kvec,
            map: fft::pad_map(n, m, dim),
            pot_grid,
            pot_sup,
            model,
            big: vec![C::default(); total_big],
            grid: vec![0.0; total_big],
            grads: vec![vec![0.0; total_big]; dim],
            vgrid: vec![0.0; total_big],
            cache_dt: f64::NAN,
            e1: Vec::new(),
            p1: Vec::new(),
            p2: Vec::new(),
            rate: 0.0,
        }
    }

    pub(crate) fn direct(pots: &PotentialSet, kappa: f64, p: u32) -> Engine {
        Self::base(pots, kappa, p, p as usize + 1, Model::Direct)
    }

    pub(crate) fn log(pots: &PotentialSet, kappa: f64, p: u32) -> Engine {
        Self::base(pots, kappa, p, 2, Model::Log)
    }

    pub(crate) fn conjugated(
        pots: &PotentialSet,
        kappa: f64,
        p: u32,
        phi: &TorusField,
        a: f64,
    ) -> Engine {
        let mut e = Self::base(pots, kappa, p, p as usize + 2, Model::Direct);
        let m = e.m;
        let grad_phi: Vec<Vec<f64>> = (0..e.dim)
            .map(|ax| phi.derivative(ax).grid_values_padded(m))
            .collect();
        let lap = phi.laplacian().grid_values_padded(m);
        let phig = phi.grid_values_padded(m);
        let total = phig.len();
        let mut potential = vec![0.0; total];
        let mut damping = vec![0.0; total];
        let mut gmax: f64 = 0.0;
        for j in 0..total {
            let b: f64 = grad_phi.iter().map(|g| g[j] * g[j]).sum();
            gmax = gmax.max(b.sqrt());
            potential[j] = a * a * b - a * lap[j];
            damping[j] = (-(p as f64) * a * phig[j]).exp();
        }
        e.model = Model::Conjugated {
            a,
            grad_phi,
            potential,
            damping,
            grad_phi_max: gmax,
        };
        e
    }

    fn kmax(&self) -> f64 {
        (self.n / 2) as f64
    }

    fn load_big(&mut self, coeffs: &[C]) {
        self.big.iter_mut().for_each(|v| *v = C::default());
        for (c, slot) in coeffs.iter().zip(&self.map) {
            if let Some(t) = slot {
                self.big[*t] = *c;
            }
        }
    }

    fn inverse_into(&mut self, coeffs: &[C], target: usize) {
        // target: usize::MAX -> self.grid, axis index -> gradient along that axis
        if target == usize::MAX {
            self.load_big(coeffs);
        } else {
            self.big.iter_mut().for_each(|v| *v = C::default());
            for (idx, (c, slot)) in coeffs.iter().zip(&self.map).enumerate() {
                if let Some(t) = slot {
                    self.big[*t] = c * C::new(0.0, self.kvec[target][idx]);
                }
            }
        }
        fft::inverse(&mut self.big, self.m, self.dim);
        let dst = if target == usize::MAX {
            &mut self.grid
        } else {
            &mut self.grads[target]
        };
        for (d, b) in dst.iter_mut().zip(&self.big) {
            *d = b.re;
        }
    }

    fn forward_from(&mut self, values: &[f64], out: &mut [C]) {
        for (b, v) in self.big.iter_mut().zip(values) {
            *b = C::new(*v, 0.0);
        }
        fft::forward(&mut self.big, self.m, self.dim);
        for (o, slot) in out.iter_mut().zip(&self.map) {
            *o = slot.map(|t| self.big[t]).unwrap_or_default();
        }
        out[0].im = 0.0;
    }

    fn potential_grid(&mut self, u: &[f64]) -> f64 {
        self.vgrid.iter_mut().for_each(|v| *v = 0.0);
        let mut sup = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                for (v, q) in self.vgrid.iter_mut().zip(&self.pot_grid[i]) {
                    *v += ui * q;
                }
                sup += ui.abs() * self.pot_sup[i];
            }
        }
        sup
    }

    /// Nonlinear part N(state, u) in coefficient space.
    fn rhs(&mut self, state: &[C], u: &[f64], out: &mut [C]) {
        let vsup = self.potential_grid(u);
        let kappa = self.kappa;
        let p = self.p;
        let total = self.grid.len();
        let mut vals = vec![0.0; total];
        match &self.model {
            Model::Direct => {
                self.inverse_into(state, usize::MAX);
                let mut gmax: f64 = 0.0;
                for ((v, &g), &q) in vals.iter_mut().zip(&self.grid).zip(&self.vgrid) {
                    gmax = gmax.max(g.abs());
                    *v = -kappa * g.powi(p as i32 + 1) + q * g;
                }
                self.rate = 1.0 + vsup + kappa.abs() * (p as f64 + 1.0) * gmax.powi(p as i32);
            }
            Model::Log => {
                self.inverse_into(state, usize::MAX);
                for ax in 0..self.dim {
                    self.inverse_into(state, ax);
                }
                let mut gmax: f64 = 0.0;
                let mut emax: f64 = 0.0;
                for j in 0..total {
                    let g2: f64 = self.grads.iter().map(|g| g[j] * g[j]).sum();
                    gmax = gmax.max(g2.sqrt());
                    let e = (p as f64 * self.grid[j]).exp();
                    emax = emax.max(e);
                    vals[j] = g2 - kappa * e + self.vgrid[j];
                }
                self.rate = 1.0 + 2.0 * gmax * self.kmax() + kappa.abs() * p as f64 * emax;
            }
            Model::Conjugated { .. } => {
                self.inverse_into(state, usize::MAX);
                for ax in 0..self.dim {
                    self.inverse_into(state, ax);
                }
                let Model::Conjugated {
                    a,
                    grad_phi,
                    potential,
                    damping,
                    grad_phi_max,
                } = &self.model
                else {
                    unreachable!()
                };
                let mut rmax: f64 = 0.0;
                for j in 0..total {
                    let th = self.grid[j];
                    let adv: f64 = (0..self.dim)
                        .map(|ax| grad_phi[ax][j] * self.grads[ax][j])
                        .sum();
                    let reac = potential[j] + self.vgrid[j];
                    let nl = damping[j] * th.powi(p as i32);
                    rmax = rmax.max(reac.abs() + kappa.abs() * (p as f64 + 1.0) * nl.abs());
                    vals[j] = -2.0 * a * adv + reac * th - kappa * nl * th;
                }
                self.rate = 1.0 + 2.0 * a * grad_phi_max * self.kmax() + rmax;
            }
        }
        self.forward_from(&vals, out);
    }

    fn coefficients(&mut self, dt: f64) {
        if dt == self.cache_dt {
            return;
        }
        self.cache_dt = dt;
        self.e1.clear();
        self.p1.clear();
        self.p2.clear();
        for &q in &self.k2 {
            let z = -q * dt;
            let (a, b) = phi_functions(z);
            self.e1.push(z.exp());
            self.p1.push(a);
            self.p2.push(b);
        }
    }

    /// One ETD2RK step; `n0` must hold N(state, u0) on entry.
    fn step(&mut self, state: &mut [C], n0: &[C], u1: &[f64], dt: f64) {
        self.coefficients(dt);
        let len = state.len();
        let mut a = vec![C::default(); len];
        for j in 0..len {
            a[j] = self.e1[j] * state[j] + dt * self.p1[j] * n0[j];
        }
        let mut n1 = vec![C::default(); len];
        self.rhs(&a, u1, &mut n1);
        for j in 0..len {
            state[j] = a[j] + dt * self.p2[j] * (n1[j] - n0[j]);
        }
    }

    fn is_adaptive(&self) -> bool {
        !matches!(self.model, Model::Direct)
    }

    /// ψ represented by the engine state.
    fn psi_field(&self, state: &[C]) -> TorusField {
        let f = TorusField::from_coeffs_unchecked(self.dim, self.n, state.to_vec());
        match self.model {
            Model::Log => from_log(&f),
            _ => f,
        }
    }

    fn overflow_norm(&self, state: &[C], threshold: f64) -> Option<f64> {
        match self.model {
            Model::Log => {
                let bound: f64 = state.iter().map(|c| c.norm()).sum();
                if bound.is_finite() && bound < threshold.ln() {
                    None
                } else {
                    let psi = self.psi_field(state);
                    let h = psi.hs_norm(1);
                    (!(h <= threshold)).then_some(h)
                }
            }
            _ => {
                let h = hs_norm_coeffs(state, self.n, self.dim, 1);
                (!(h <= threshold)).then_some(h)
            }
        }
    }

    /// Integrates across the schedule; `record` receives (t, state).
    fn run(
        &mut self,
        state: &mut [C],
        sched: &ControlSchedule,
        opts: &SolverOptions,
        t_offset: f64,
        mut record: impl FnMut(&Engine, f64, &[C], bool),
    ) -> (usize, Option<BlowUp>) {
        let width = sched.width();
        let every = matches!(opts.record, Record::EveryStep);
        let extra: &[f64] = match &opts.record {
            Record::Times(ts) => ts,
            _ => &[],
        };
        let record_nodes = !matches!(opts.record, Record::Times(_));
        record(self, t_offset, state, true);
        let starts = sched.segment_starts();
        let total = sched.duration();
        let mut steps = 0usize;
        let mut u0 = vec![0.0; width];
        let mut u1 = vec![0.0; width];
        let mut n0 = vec![C::default(); state.len()];
        for (seg, &start) in sched.segments().iter().zip(&starts) {
            let mut stops = seg.nodes();
            for &t in extra {
                let local = t - t_offset - start;
                if local > 0.0 && local < seg.duration {
                    stops.push(local);
                }
            }
            stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
            stops.dedup();
            let vsup = seg.weighted_sup(&self.pot_sup);
            let nominal = (seg.duration / opts.min_steps_per_segment as f64)
                .min(opts.max_dt)
                .min(opts.control_step_scale / (1.0 + vsup));
            let nominal_adaptive =
                (seg.duration / opts.min_steps_per_segment as f64).min(opts.max_dt);
            for w in stops.windows(2) {
                let (a, b) = (w[0], w[1]);
                let mut t = a;
                let fixed_n = ((b - a) / nominal - 1e-9).ceil().max(1.0) as usize;
                let mut k = 0usize;
                loop {
                    seg.value_into(t, &mut u0);
                    self.rhs(state, &u0, &mut n0);
                    let remaining = b - t;
                    let dt = if self.is_adaptive() {
                        let target = nominal_adaptive.min(opts.cfl / self.rate);
                        let left = (remaining / target - 1e-9).ceil().max(1.0);
                        remaining / left
                    } else {
                        (b - a) / fixed_n as f64
                    };
                    let t_next = if self.is_adaptive() {
                        if dt >= remaining {
                            b
                        } else {
                            t + dt
                        }
                    } else {
                        k += 1;
                        if k == fixed_n {
                            b
                        } else {
                            a + k as f64 * dt
                        }
                    };
                    let h = t_next - t;
                    seg.value_into(t_next, &mut u1);
                    self.step(state, &n0, &u1, h);
                    steps += 1;
                    t = t_next;
                    let tg = t_offset + start + t;
                    if let Some(norm) = self.overflow_norm(state, opts.blowup_threshold) {
                        return (steps, Some(BlowUp { time: tg, norm }));
                    }
                    let at_end = t >= b;
                    if every {
                        record(self, tg, state, false);
                    }
                    if at_end {
                        break;
                    }
                }
                let tg = t_offset + start + b;
                let wanted = extra
                    .iter()
                    .any(|&x| (x - tg).abs() <= 1e-12 * tg.abs().max(1.0));
                if (record_nodes || wanted) && !every {
                    record(self, tg, state, false);
                }
            }
        }
        let _ = total;
        (steps, None)
    }
}

/// ln ψ for a strictly positive field.
pub fn to_log(psi: &TorusField) -> Result<TorusField> {
    let min = psi.min_fine(2);
    if !(min > 0.0) {
        return Err(Error::Positivity(format!(
            "log variables need ψ > 0, minimum is {min:e}"
        )));
    }
    psi.map_pointwise(3, f64::ln)
}

/// e^ζ.
pub fn from_log(zeta: &TorusField) -> TorusField {
    zeta.map_pointwise(3, f64::exp)
        .expect("pad factor 2 is allowed")
}

fn choose_formulation(psi0: &TorusField, f: Formulation) -> Formulation {
    match f {
        Formulation::Auto => {
            if psi0.min_fine(2) > 0.0 {
                Formulation::Log
            } else {
                Formulation::Direct
            }
        }
        other => other,
    }
}

fn check_potentials(psi: &TorusField, pots: &PotentialSet, width: usize) -> Result<()> {
    if psi.dim() != pots.dim() || psi.modes_per_axis() != pots.modes_per_axis() {
        return Err(Error::DimensionMismatch {
            expected: format!("d={}, N={}", pots.dim(), pots.modes_per_axis()),
            got: format!("d={}, N={}", psi.dim(), psi.modes_per_axis()),
        });
    }
    if width != pots.width() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} control components", pots.width()),
            got: width.to_string(),
        });
    }
    Ok(())
}

/// One ETD2RK step of length `dt` with the control frozen at `u`.
pub fn step_nhe(
    psi: &TorusField,
    u: &[f64],
    pots: &PotentialSet,
    kappa: f64,
    p: u32,
    dt: f64,
) -> Result<TorusField> {
    check_potentials(psi, pots, u.len())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let mut eng = Engine::direct(pots, kappa, p);
    let mut state = psi.coeffs().to_vec();
    let mut n0 = vec![C::default(); state.len()];
    eng.rhs(&state, u, &mut n0);
    eng.step(&mut state, &n0, u, dt);
    Ok(TorusField::from_coeffs_unchecked(
        psi.dim(),
        psi.modes_per_axis(),
        state,
    ))
}

/// Integrates the controlled equation over the whole schedule. Blow-up
/// truncates the trajectory and sets `blowup`; it is not an error.
pub fn solve_nhe(
    psi0: &TorusField,
    sched: &ControlSchedule,
    pots: &PotentialSet,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    solve_nhe_from(psi0, sched, pots, opts, 0.0)
}

/// As [`solve_nhe`] with the schedule starting at time `t0`.
pub fn solve_nhe_from(
    psi0: &TorusField,
    sched: &ControlSchedule,
    pots: &PotentialSet,
    opts: &SolverOptions,
    t0: f64,
) -> Result<Trajectory> {
    check_potentials(psi0, pots, sched.width())?;
    let form = choose_formulation(psi0, opts.formulation);
    let (mut eng, mut state) = match form {
        Formulation::Log => (
            Engine::log(pots, opts.kappa, opts.p),
            to_log(psi0)?.coeffs().to_vec(),
        ),
        _ => (
            Engine::direct(pots, opts.kappa, opts.p),
            psi0.coeffs().to_vec(),
        ),
    };
    let mut traj = Trajectory::new();
    let (steps, blowup) = eng.run(&mut state, sched, opts, t0, |e, t, s, _| {
        traj.push(t, e.psi_field(s));
    });
    traj.steps = steps;
    if let Some(b) = blowup {
        traj.blowup = Some(b);
    } else if traj
        .times
        .last()
        .is_some_and(|&t| t < t0 + sched.duration() - 1e-12)
    {
        traj.push(t0 + sched.duration(), eng.psi_field(&state));
    }
    Ok(traj)
}

/// Final state only; errors on blow-up.
pub fn evolve(
    psi0: &TorusField,
    sched: &ControlSchedule,
    pots: &PotentialSet,
    opts: &SolverOptions,
) -> Result<TorusField> {
    if sched.is_empty() {
        return Ok(psi0.clone());
    }
    let opts = SolverOptions {
        record: Record::Times(Vec::new()),
        ..opts.clone()
    };
    let traj = solve_nhe(psi0, sched, pots, &opts)?.completed()?;
    Ok(traj.final_state().clone())
}

/// Evolves ζ = ln ψ directly; for data whose exponential is below
/// floating-point resolution somewhere. Returns the final ζ and the step
/// count, or the blow-up.
pub fn evolve_log(
    zeta0: &TorusField,
    sched: &ControlSchedule,
    pots: &PotentialSet,
    opts: &SolverOptions,
) -> Result<(TorusField, usize)> {
    check_potentials(zeta0, pots, sched.width())?;
    let mut eng = Engine::log(pots, opts.kappa, opts.p);
    let mut state = zeta0.coeffs().to_vec();
    let opts = SolverOptions {
        record: Record::Times(Vec::new()),
        ..opts.clone()
    };
    let (steps, blowup) = eng.run(&mut state, sched, &opts, 0.0, |_, _, _, _| {});
    if let Some(b) = blowup {
        return Err(Error::BlowUp {
            time: b.time,
            norm: b.norm,
        });
    }
    Ok((
        TorusField::from_coeffs_unchecked(zeta0.dim(), zeta0.modes_per_axis(), state),
        steps,
    ))
}

/// Evolves θ = e^{aφ}ψ under the gauge-transformed equation.
pub fn solve_conjugated(
    theta0: &TorusField,
    phi: &TorusField,
    a: f64,
    sched: &ControlSchedule,
    pots: &PotentialSet,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    check_potentials(theta0, pots, sched.width())?;
    let mut eng = Engine::conjugated(pots, opts.kappa, opts.p, phi, a);
    let mut state = theta0.coeffs().to_vec();
    let mut traj = Trajectory::new();
    let opts = SolverOptions {
        record: Record::Times(Vec::new()),
        ..opts.clone()
    };
    let (steps, blowup) = eng.run(&mut state, sched, &opts, 0.0, |e, t, s, _| {
        traj.push(t, e.psi_field(s));
    });
    traj.steps = steps;
    traj.blowup = blowup;
    if blowup.is_none() {
        traj.push(sched.duration(), eng.psi_field(&state));
    }
    Ok(traj)
}

/// Mode-wise exact solution of ∂ξ = Δξ − σξ + ⟨v(t),Q⟩Φ with
/// σ = κpΦ^p, the linearization of the controlled equation around
/// (Φ, u_κ). Controls are piecewise linear so the Duhamel integrals are
/// evaluated in closed form.
pub fn solve_linearized(
    xi0: &TorusField,
    v: &ControlSchedule,
    pots: &PotentialSet,
    kappa: f64,
    p: u32,
    record: &Record,
    t0: f64,
) -> Result<Trajectory> {
    check_potentials(xi0, pots, v.width())?;
    let dim = xi0.dim();
    let phi = ground_value(dim);
    let sigma = kappa * p as f64 * phi.powi(p as i32);
    let k2 = xi0.wavenumber_squares();
    let qhat: Vec<&[C]> = pots.components().iter().map(|q| q.coeffs()).collect();
    let mut state = xi0.coeffs().to_vec();
    let len = state.len();
    let mut traj = Trajectory::new();
    traj.push(t0, xi0.clone());
    let extra: &[f64] = match record {
        Record::Times(ts) => ts,
        _ => &[],
    };
    let mut f0 = vec![C::default(); len];
    let mut f1 = vec![C::default(); len];
    let forcing = |u: &[f64], out: &mut [C]| {
        out.iter_mut().for_each(|v| *v = C::default());
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                for (o, q) in out.iter_mut().zip(qhat[i]) {
                    *o += phi * ui * q;
                }
            }
        }
    };
    for (seg, &start) in v.segments().iter().zip(&v.segment_starts()) {
        let mut stops = seg.nodes();
        for &t in extra {
            let local = t - t0 - start;
            if local > 0.0 && local < seg.duration {
                stops.push(local);
            }
        }
        stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
        stops.dedup();
        for w in stops.windows(2) {
            let h = w[1] - w[0];
            let ua = seg.value(w[0]);
            let ub = match &seg.law {
                ControlLaw::Constant(u) => u.clone(),
                ControlLaw::Sampled { .. } => seg.value(w[1]),
            };
            forcing(&ua, &mut f0);
            forcing(&ub, &mut f1);
            for j in 0..len {
                let z = -(k2[j] + sigma) * h;
                let (p1, p2) = phi_functions(z);
                let w0 = h * (p1 - p2);
                let w1 = h * p2;
                state[j] = z.exp() * state[j] + w0 * f0[j] + w1 * f1[j];
            }
            let tg = t0 + start + w[1];
            let wanted = match record {
                Record::Times(_) => extra
                    .iter()
                    .any(|&x| (x - tg).abs() <= 1e-12 * tg.abs().max(1.0)),
                _ => true,
            };
            if wanted {
                traj.push(
                    tg,
                    TorusField::from_coeffs_unchecked(dim, xi0.modes_per_axis(), state.clone()),
                );
            }
        }
    }
    let end = t0 + v.duration();
    if traj.times.last().is_some_and(|&t| t < end - 1e-12) {
        traj.push(
            end,
            TorusField::from_coeffs_unchecked(dim, xi0.modes_per_axis(), state),
        );
    }
    Ok(traj)
}

/// sup_t ‖ψ(t;ψ₀,u) − ψ(t;φ₀,v)‖_{H^s} over a uniform grid of `samples`
/// times, and the input distance ‖ψ₀ − φ₀‖_{H^s} + ‖u − v‖_{L²}.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_probe(
    psi0: &TorusField,
    phi0: &TorusField,
    u: &ControlSchedule,
    v: &ControlSchedule,
    pots: &PotentialSet,
    opts: &SolverOptions,
    s: u32,
    samples: usize,
) -> Result<(f64, f64)> {
    let t_end = u.duration();
    if (v.duration() - t_end).abs() > 1e-12 * t_end.max(1.0) {
        return Err(Error::InvalidInput(
            "schedules must have equal duration".into(),
        ));
    }
    let times: Vec<f64> = (1..=samples)
        .map(|j| t_end * j as f64 / samples as f64)
        .collect();
    let o = SolverOptions {
        record: Record::Times(times),
        ..opts.clone()
    };
    let a = solve_nhe(psi0, u, pots, &o)?.completed()?;
    let b = solve_nhe(phi0, v, pots, &o)?.completed()?;
    if a.times.len() != b.times.len() {
        return Err(Error::InvalidInput(
            "runs recorded different time grids".into(),
        ));
    }
    let lhs = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x - y).hs_norm(s))
        .fold(0.0, f64::max);
    let rhs = (psi0 - phi0).hs_norm(s) + u.l2_distance(v)?;
    Ok((lhs, rhs))
}

/// Residual of the mild formula at the final time of a direct-model
/// trajectory recorded at every step:
/// ψ(T) − e^{TΔ}ψ₀ − ∫₀^T e^{(T−s)Δ}(⟨u,Q⟩ψ − κψ^{p+1}) ds,
/// with the integral by the trapezoidal rule on the step grid.
pub fn duhamel_residual(
    traj: &Trajectory,
    sched: &ControlSchedule,
    pots: &PotentialSet,
    opts: &SolverOptions,
    s: u32,
) -> Result<f64> {
    if traj.times.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two recorded states".into(),
        ));
    }
    let mut eng = Engine::direct(pots, opts.kappa, opts.p);
    let t_end = traj.final_time();
    let t0 = traj.times[0];
    let first = &traj.states[0];
    let len = first.len();
    let k2 = first.wavenumber_squares();
    let starts = sched.segment_starts();
    let mut acc = vec![C::default(); len];
    let mut nbuf = vec![C::default(); len];
    for j in 0..traj.times.len() - 1 {
        let (ta, tb) = (traj.times[j], traj.times[j + 1]);
        let mid = 0.5 * (ta + tb) - t0;
        let si = starts.iter().rposition(|&st| st <= mid).unwrap_or(0);
        let seg = &sched.segments()[si];
        let h = tb - ta;
        for (t, state) in [(ta, &traj.states[j]), (tb, &traj.states[j + 1])] {
            let u = seg.value(t - t0 - starts[si]);
            eng.rhs(state.coeffs(), &u, &mut nbuf);
            for i in 0..len {
                acc[i] += 0.5 * h * (-k2[i] * (t_end - t)).exp() * nbuf[i];
            }
        }
    }
    let fin = traj.final_state().coeffs();
    let res: Vec<C> = (0..len)
        .map(|i| fin[i] - (-k2[i] * (t_end - t0)).exp() * first.coeffs()[i] - acc[i])
        .collect();
    Ok(hs_norm_coeffs(&res, first.modes_per_axis(), first.dim(), s))
}

/// Compensated total of a list of step lengths.
pub fn total_time(steps: &[f64]) -> f64 {
    compensated_sum(steps.iter().copied())
}
