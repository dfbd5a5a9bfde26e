//! Saturation spaces H_j, compilation of exponent expressions into impulsive
//! control schedules, and approximate steering built on them.
//!
//! A leaf c ∈ R^q stands for ⟨c, (Q₁,…,Q_q)⟩ ∈ H₀. Applying an impulse
//! (c/δ over time δ) multiplies the state by e^{⟨c,Q⟩} as δ → 0; conjugating
//! a free evolution of length δ by e^{∓δ^{-1/2}φ} multiplies it by e^{B(φ)}.

use crate::error::{Error, Result};
use crate::field::{Basis, TorusField};
use crate::linalg::{lstsq, nnls};
use crate::potentials::PotentialSet;
use crate::schedule::{compensated_sum, ControlSchedule};
use crate::solver::{self, Formulation, SolverOptions};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SaturationExpr {
    /// Coefficients over (Q₁, …, Q_q).
    Leaf(Vec<f64>),
    Sum(Vec<SaturationExpr>),
    BApply(Box<SaturationExpr>),
}

impl SaturationExpr {
    pub fn bapply(child: SaturationExpr) -> Self {
        SaturationExpr::BApply(Box::new(child))
    }

    /// Saturation level: leaves are in H₀, each B raises the level by one.
    pub fn depth(&self) -> usize {
        match self {
            SaturationExpr::Leaf(_) => 0,
            SaturationExpr::Sum(c) => c.iter().map(|e| e.depth()).max().unwrap_or(0),
            SaturationExpr::BApply(c) => 1 + c.depth(),
        }
    }

    pub fn eval(&self, pots: &PotentialSet) -> TorusField {
        match self {
            SaturationExpr::Leaf(c) => pots.combine(c),
            SaturationExpr::Sum(children) => {
                let mut acc = TorusField::zeros(pots.dim(), pots.modes_per_axis());
                for c in children {
                    acc = &acc + &c.eval(pots);
                }
                acc
            }
            SaturationExpr::BApply(c) => c.eval(pots).b_operator(),
        }
    }

    /// a·expr for a ≥ 0, using a·B(g) = B(√a g). Negative factors are only
    /// representable for leaves and sums of leaves.
    pub fn scale(&self, a: f64) -> Option<SaturationExpr> {
        match self {
            SaturationExpr::Leaf(c) => {
                Some(SaturationExpr::Leaf(c.iter().map(|v| v * a).collect()))
            }
            SaturationExpr::Sum(children) => children
                .iter()
                .map(|c| c.scale(a))
                .collect::<Option<Vec<_>>>()
                .map(SaturationExpr::Sum),
            SaturationExpr::BApply(c) => {
                if a < 0.0 {
                    None
                } else {
                    c.scale(a.sqrt()).map(SaturationExpr::bapply)
                }
            }
        }
    }

    /// expr + leaf(c).
    pub fn add_leaf(&self, c: &[f64]) -> SaturationExpr {
        match self {
            SaturationExpr::Leaf(x) => {
                SaturationExpr::Leaf(x.iter().zip(c).map(|(a, b)| a + b).collect())
            }
            SaturationExpr::Sum(children) => {
                let mut out = children.clone();
                if let Some(pos) = out
                    .iter()
                    .rposition(|e| matches!(e, SaturationExpr::Leaf(_)))
                {
                    out[pos] = out[pos].add_leaf(c);
                } else {
                    out.push(SaturationExpr::Leaf(c.to_vec()));
                }
                SaturationExpr::Sum(out)
            }
            SaturationExpr::BApply(_) => {
                SaturationExpr::Sum(vec![self.clone(), SaturationExpr::Leaf(c.to_vec())])
            }
        }
    }

    /// Number of factors a compiled schedule applies in sequence at the top.
    pub fn fanout(&self) -> usize {
        match self {
            SaturationExpr::Sum(c) => c.len().max(1),
            _ => 1,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SaturationExpr::Leaf(c) => c.iter().all(|v| *v == 0.0),
            SaturationExpr::Sum(c) => c.iter().all(|e| e.is_zero()),
            SaturationExpr::BApply(c) => c.is_zero(),
        }
    }

    /// Human-readable form, e.g. `B(1·Q2) + (0.5·Q1)`.
    pub fn describe(&self) -> String {
        match self {
            SaturationExpr::Leaf(c) => {
                let terms: Vec<String> = c
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| format!("{v:.6}·Q{}", i + 1))
                    .collect();
                if terms.is_empty() {
                    "0".into()
                } else {
                    format!("({})", terms.join(" + "))
                }
            }
            SaturationExpr::Sum(c) => c
                .iter()
                .map(|e| e.describe())
                .collect::<Vec<_>>()
                .join(" + "),
            SaturationExpr::BApply(c) => format!("B({})", c.describe()),
        }
    }
}

// ---------------------------------------------------------------------------
// generator sets and the density criterion

/// A finite set L ⊂ Z^d; its potentials are {1, cos⟨k,x⟩, sin⟨k,x⟩}_{k∈L}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSet {
    pub dim: usize,
    pub vectors: Vec<Vec<i64>>,
}

impl GeneratorSet {
    pub fn new(dim: usize, vectors: Vec<Vec<i64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidInput("generator set is empty".into()));
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::InvalidInput(format!("{v:?} is not in Z^{dim}")));
            }
            if v.iter().all(|&x| x == 0) {
                return Err(Error::InvalidInput("zero vector in generator set".into()));
            }
        }
        Ok(GeneratorSet { dim, vectors })
    }

    /// {e₁, …, e_{d−1}, (1, …, 1)}.
    pub fn standard(dim: usize) -> Self {
        let mut vectors = Vec::new();
        for i in 0..dim.saturating_sub(1) {
            let mut e = vec![0; dim];
            e[i] = 1;
            vectors.push(e);
        }
        vectors.push(vec![1; dim]);
        GeneratorSet { dim, vectors }
    }

    pub fn potentials(&self, n: usize) -> PotentialSet {
        PotentialSet::trigonometric(self.dim, n, &self.vectors)
    }

    /// Largest least-squares residual of 1, cos⟨k,x⟩, sin⟨k,x⟩ in span(Q).
    pub fn membership_residual(&self, pots: &PotentialSet) -> f64 {
        let n = pots.modes_per_axis();
        let mut worst: f64 = pots.project_h0(&TorusField::constant(self.dim, n, 1.0)).1;
        for k in &self.vectors {
            for f in trig_pair(self.dim, n, k) {
                worst = worst.max(pots.project_h0(&f).1);
            }
        }
        worst
    }
}

fn trig_pair(dim: usize, n: usize, k: &[i64]) -> [TorusField; 2] {
    let kc = k.to_vec();
    let ks = k.to_vec();
    [
        TorusField::from_fn(dim, n, move |x| kdot(&kc, x).cos()),
        TorusField::from_fn(dim, n, move |x| kdot(&ks, x).sin()),
    ]
}

fn kdot(k: &[i64], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DensityFailure {
    /// The lattice spanned by L has index `index` in Z^d (0: not full rank).
    Generator { index: u128 },
    /// The non-orthogonality graph has `components` components.
    Chain { components: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DensityVerdict {
    pub failures: Vec<DensityFailure>,
}

impl DensityVerdict {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn det_bareiss(mut m: Vec<Vec<i128>>) -> i128 {
    let n = m.len();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if m[k][k] == 0 {
            match (k + 1..n).find(|&r| m[r][k] != 0) {
                Some(r) => {
                    m.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Checks that L generates Z^d (gcd of the maximal minors is 1) and that
/// the graph joining non-orthogonal elements of L is connected.
pub fn density_check(l: &GeneratorSet) -> DensityVerdict {
    let d = l.dim;
    let mut failures = Vec::new();
    let mut g: u128 = 0;
    for cols in combinations(l.vectors.len(), d) {
        let m: Vec<Vec<i128>> = (0..d)
            .map(|r| cols.iter().map(|&c| l.vectors[c][r] as i128).collect())
            .collect();
        g = gcd(g, det_bareiss(m).unsigned_abs());
    }
    if g != 1 {
        failures.push(DensityFailure::Generator { index: g });
    }
    let n = l.vectors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            let dot: i64 = l.vectors[i]
                .iter()
                .zip(&l.vectors[j])
                .map(|(a, b)| a * b)
                .sum();
            if dot != 0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    roots.sort_unstable();
    roots.dedup();
    if roots.len() > 1 {
        failures.push(DensityFailure::Chain {
            components: roots.len(),
        });
    }
    DensityVerdict { failures }
}

// ---------------------------------------------------------------------------
// impulses and the conjugated limit

/// One constant segment of duration δ with value (u/δ, 0, 0).
pub fn impulse_schedule(u: &[f64], delta: f64, width: usize) -> Result<ControlSchedule> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "impulse duration must be positive, got {delta}"
        )));
    }
    if u.len() + 2 != width {
        return Err(Error::DimensionMismatch {
            expected: format!("{} saturation coefficients", width - 2),
            got: u.len().to_string(),
        });
    }
    let mut v: Vec<f64> = u.iter().map(|x| x / delta).collect();
    v.resize(width, 0.0);
    ControlSchedule::constant(width, delta, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitRoute {
    /// θ = e^{aφ}ψ evolved directly; the conjugation is exact.
    Conjugated,
    /// ζ = ln ψ, requires ψ₀ > 0.
    Log,
    /// ψ itself; usable only while e^{a·range φ} is far from round-off.
    Direct,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitRow {
    pub delta: f64,
    pub error: f64,
    pub blowup: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitExperiment {
    /// Constant added to φ to make it nonnegative.
    pub shift: f64,
    pub target_norm: f64,
    pub rows: Vec<LimitRow>,
}

/// ‖e^{aφ}ψ(δ; e^{−aφ}ψ₀, u/δ) − e^{B(φ)+⟨u,Q⟩}ψ₀‖_{H^s}, a = δ^{−1/2}, for
/// each δ.
#[allow(clippy::too_many_arguments)]
pub fn conjugated_limit_experiment(
    psi0: &TorusField,
    phi: &TorusField,
    u: &[f64],
    deltas: &[f64],
    pots: &PotentialSet,
    opts: &SolverOptions,
    s: u32,
    route: LimitRoute,
) -> Result<LimitExperiment> {
    let min = phi.min_fine(4);
    let shift = if min < 0.0 { -min } else { 0.0 };
    let phi = phi.add_constant(shift);
    let exponent = &phi.b_operator() + &pots.combine(u);
    let target = psi0.pointwise_exp_scale(&exponent, 1.0)?;
    let rows = deltas
        .par_iter()
        .map(|&delta| limit_row(psi0, &phi, u, delta, &target, pots, opts, s, route))
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitExperiment {
        shift,
        target_norm: target.hs_norm(s),
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn limit_row(
    psi0: &TorusField,
    phi: &TorusField,
    u: &[f64],
    delta: f64,
    target: &TorusField,
    pots: &PotentialSet,
    opts: &SolverOptions,
    s: u32,
    route: LimitRoute,
) -> Result<LimitRow> {
    let a = delta.powf(-0.5);
    let sched = impulse_schedule(u, delta, pots.width())?;
    let blown = |steps| LimitRow {
        delta,
        error: f64::INFINITY,
        blowup: true,
        steps,
    };
    let (fin, steps) = match route {
        LimitRoute::Conjugated => {
            let traj = solver::solve_conjugated(psi0, phi, a, &sched, pots, opts)?;
            if traj.is_blowup() {
                return Ok(blown(traj.steps));
            }
            (traj.final_state().clone(), traj.steps)
        }
        LimitRoute::Log => {
            let zeta0 = solver::to_log(psi0)?.axpy(-a, phi);
            match solver::evolve_log(&zeta0, &sched, pots, opts) {
                Ok((z, steps)) => (solver::from_log(&z.axpy(a, phi)), steps),
                Err(Error::BlowUp { .. }) => return Ok(blown(0)),
                Err(e) => return Err(e),
            }
        }
        LimitRoute::Direct => {
            let start = psi0.pointwise_exp_scale(phi, -a)?;
            let o = SolverOptions {
                formulation: Formulation::Direct,
                record: solver::Record::Times(Vec::new()),
                ..opts.clone()
            };
            let traj = solver::solve_nhe(&start, &sched, pots, &o)?;
            if traj.is_blowup() {
                return Ok(blown(traj.steps));
            }
            (traj.final_state().pointwise_exp_scale(phi, a)?, traj.steps)
        }
    };
    Ok(LimitRow {
        delta,
        error: (&fin - target).hs_norm(s),
        blowup: false,
        steps,
    })
}

// ---------------------------------------------------------------------------
// exponent fitting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_depth: usize,
    /// Highest frequency (sup norm) of trigonometric B-arguments.
    pub max_degree: usize,
    pub tol: f64,
    /// Residuals are measured in H^s.
    pub s: u32,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_depth: 2,
            max_degree: 3,
            tol: 1e-6,
            s: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub expr: SaturationExpr,
    pub residual: f64,
}

fn weighted_vector(f: &TorusField, s: u32) -> DVector<f64> {
    let vol = (2.0 * PI).powi(f.dim() as i32);
    let k2 = f.wavenumber_squares();
    let mut out = DVector::zeros(2 * f.len());
    for (i, (c, q)) in f.coeffs().iter().zip(&k2).enumerate() {
        let w = (vol * (1.0 + q).powi(s as i32)).sqrt();
        out[2 * i] = w * c.re;
        out[2 * i + 1] = w * c.im;
    }
    out
}

struct Dictionary {
    /// B-arguments per level (level 1 arguments are H₀ leaves).
    args: Vec<Vec<(SaturationExpr, TorusField)>>,
}

fn canonical(k: &[i64]) -> Option<Vec<i64>> {
    let first = k.iter().find(|&&v| v != 0)?;
    Some(if *first < 0 {
        k.iter().map(|v| -v).collect()
    } else {
        k.to_vec()
    })
}

fn build_dictionary(pots: &PotentialSet, cfg: &FitConfig, depth: usize) -> Dictionary {
    let dim = pots.dim();
    let n = pots.modes_per_axis();
    let q = pots.q();
    let mut args: Vec<Vec<(SaturationExpr, TorusField)>> = Vec::new();
    // level 1: non-constant potentials and their pairwise ± sums
    let base: Vec<usize> = (0..q)
        .filter(|&i| pots.component(i).b_operator().l2_norm() > 1e-12)
        .collect();
    let mut level1 = Vec::new();
    for (a, &i) in base.iter().enumerate() {
        let mut e = vec![0.0; q];
        e[i] = 1.0;
        level1.push(SaturationExpr::Leaf(e.clone()));
        for &j in &base[a + 1..] {
            for sign in [1.0, -1.0] {
                let mut c = e.clone();
                c[j] = sign;
                level1.push(SaturationExpr::Leaf(c));
            }
        }
    }
    args.push(
        level1
            .into_iter()
            .map(|e| {
                let f = e.eval(pots);
                (e, f)
            })
            .collect(),
    );
    // frequencies realized at level 0
    let mut freqs: Vec<Vec<i64>> = pots
        .frequencies()
        .iter()
        .filter_map(|k| canonical(k))
        .collect();
    for level in 2..=depth {
        let mut next = freqs.clone();
        for a in &freqs {
            for b in &freqs {
                for sign in [1i64, -1] {
                    let k: Vec<i64> = a.iter().zip(b).map(|(x, y)| x + sign * y).collect();
                    if let Some(c) = canonical(&k) {
                        if c.iter()
                            .all(|v| v.unsigned_abs() as usize <= cfg.max_degree)
                            && !next.contains(&c)
                        {
                            next.push(c);
                        }
                    }
                }
            }
        }
        freqs = next;
        let funcs: Vec<TorusField> = freqs.iter().flat_map(|k| trig_pair(dim, n, k)).collect();
        let mut candidates: Vec<TorusField> = Vec::new();
        for (a, f) in funcs.iter().enumerate() {
            candidates.push(f.clone());
            for g in &funcs[a + 1..] {
                candidates.push(f + g);
                candidates.push(f - g);
            }
        }
        let sub_cfg = FitConfig {
            max_depth: level - 1,
            tol: 1e-10,
            ..cfg.clone()
        };
        let sub_dict = Dictionary { args: args.clone() };
        let mut level_args = Vec::new();
        for f in candidates {
            if let Ok(fit) = fit_with_dictionary(&f, pots, &sub_cfg, &sub_dict, level - 1) {
                if fit.residual <= 1e-9 * f.hs_norm(cfg.s).max(1.0) {
                    level_args.push((fit.expr, f));
                }
            }
        }
        args.push(level_args);
    }
    Dictionary { args }
}

fn fit_with_dictionary(
    target: &TorusField,
    pots: &PotentialSet,
    cfg: &FitConfig,
    dict: &Dictionary,
    depth: usize,
) -> Result<FitResult> {
    let q = pots.q();
    let s = cfg.s;
    let b = weighted_vector(target, s);
    let rows = b.len();
    let h0 = DMatrix::from_columns(
        &(0..q)
            .map(|c| weighted_vector(pots.component(c), s))
            .collect::<Vec<_>>(),
    );
    // orthonormal basis of the H₀ directions
    let svd = h0.clone().svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-12 * smax)
        .collect();
    let basis = u.select_columns(keep.iter());
    let perp = |v: &DVector<f64>| v - &basis * (basis.transpose() * v);

    let mut atoms: Vec<(SaturationExpr, DVector<f64>)> = Vec::new();
    for level in 1..=depth.min(dict.args.len()) {
        for (expr, field) in &dict.args[level - 1] {
            atoms.push((expr.clone(), weighted_vector(&field.b_operator(), s)));
        }
    }
    let b_perp = perp(&b);
    let weights = if atoms.is_empty() {
        DVector::zeros(0)
    } else {
        let a_perp = DMatrix::from_columns(&atoms.iter().map(|(_, v)| perp(v)).collect::<Vec<_>>());
        nnls(&a_perp, &b_perp)
    };
    let mut approx = DVector::zeros(rows);
    let wmax = weights.iter().copied().fold(0.0, f64::max);
    let mut terms = Vec::new();
    for (i, (expr, v)) in atoms.iter().enumerate() {
        let w = weights[i];
        if w > 1e-14 * wmax.max(1e-300) && w > 0.0 {
            approx += v * w;
            terms.push(SaturationExpr::bapply(
                expr.scale(w.sqrt()).expect("positive scale"),
            ));
        }
    }
    let leaf = lstsq(&h0, &(&b - &approx), 1e-13);
    approx += &h0 * &leaf;
    let residual = (&b - &approx).norm();
    let leaf: Vec<f64> = leaf.iter().copied().collect();
    let lmax = leaf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = target.hs_norm(s).max(1e-300);
    if lmax > 1e-13 * scale || terms.is_empty() {
        terms.push(SaturationExpr::Leaf(leaf));
    }
    let expr = if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        SaturationExpr::Sum(terms)
    };
    Ok(FitResult { expr, residual })
}

/// Best fit φ₀ + Σ_k B(φ_k) of `target` over increasing depth; stops at the
/// first depth meeting `cfg.tol` and otherwise returns the lowest residual.
pub fn fit_best(target: &TorusField, pots: &PotentialSet, cfg: &FitConfig) -> Result<FitResult> {
    let dict = build_dictionary(pots, cfg, cfg.max_depth.max(1));
    let mut best: Option<FitResult> = None;
    for depth in 0..=cfg.max_depth {
        let fit = fit_with_dictionary(target, pots, cfg, &dict, depth)?;
        let done = fit.residual <= cfg.tol;
        if best.as_ref().map_or(true, |b| fit.residual < b.residual) {
            best = Some(fit);
        }
        if done {
            break;
        }
    }
    Ok(best.expect("at least depth 0 is tried"))
}

/// Fits at every depth 0..=max_depth, keeping a depth only when it lowers
/// the residual by at least 10%.
pub fn fit_each_depth(
    target: &TorusField,
    pots: &PotentialSet,
    cfg: &FitConfig,
) -> Result<Vec<FitResult>> {
    let dict = build_dictionary(pots, cfg, cfg.max_depth.max(1));
    let mut out: Vec<FitResult> = Vec::new();
    for depth in 0..=cfg.max_depth {
        let fit = fit_with_dictionary(target, pots, cfg, &dict, depth)?;
        let better = out.last().map_or(true, |b| fit.residual < 0.9 * b.residual);
        if better {
            let exact = fit.residual <= 1e-12 * target.hs_norm(cfg.s).max(1.0);
            out.push(fit);
            if exact {
                break;
            }
        }
    }
    Ok(out)
}

/// As [`fit_best`], but a residual above tolerance is an error carrying the
/// best expression found.
pub fn exponent_fit(
    target: &TorusField,
    pots: &PotentialSet,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let fit = fit_best(target, pots, cfg)?;
    if fit.residual > cfg.tol {
        return Err(Error::FitResidual {
            residual: fit.residual,
            tol: cfg.tol,
            best: Box::new(fit.expr),
        });
    }
    Ok(fit)
}

// ---------------------------------------------------------------------------
// compilation

/// Time scales for lowering an expression: the conjugation window at each
/// nesting level of B and the impulse length relative to its window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileBudget {
    pub deltas: Vec<f64>,
    pub impulse_ratio: f64,
}

impl CompileBudget {
    /// Window δ at the top level, δ² one level down, δ³ below that.
    pub fn new(delta: f64) -> Self {
        CompileBudget {
            deltas: vec![delta, delta * delta, delta * delta * delta],
            impulse_ratio: 1e-3,
        }
    }

    /// `rungs` budgets with top-level windows start, start/factor, …
    pub fn ladder(start: f64, factor: f64, rungs: usize) -> Vec<CompileBudget> {
        (0..rungs)
            .map(|j| CompileBudget::new(start / factor.powi(j as i32)))
            .collect()
    }

    fn delta(&self, level: usize) -> f64 {
        self.deltas[level.min(self.deltas.len() - 1)]
    }

    fn impulse(&self, level: usize) -> f64 {
        self.impulse_ratio * self.delta(level.saturating_sub(1))
    }
}

pub fn default_ladder() -> Vec<CompileBudget> {
    CompileBudget::ladder(1e-2, 4.0, 5)
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub schedule: ControlSchedule,
    /// eval(expr); the schedule realizes multiplication by its exponential.
    pub exponent: TorusField,
}

impl Compiled {
    pub fn predicted_target(&self, psi0: &TorusField) -> Result<TorusField> {
        psi0.pointwise_exp_scale(&self.exponent, 1.0)
    }
}

/// Lowers an expression: leaves become impulses, B(φ₁) becomes
/// [e^{−aφ̃₁}] · free(δ) · [e^{+aφ̃₁}] with φ̃₁ = φ₁ − min φ₁ + 0.1 and
/// a = δ^{−1/2}, sums are applied factor by factor in order.
pub fn compile_expr(
    expr: &SaturationExpr,
    pots: &PotentialSet,
    budget: &CompileBudget,
    fit: &FitConfig,
) -> Result<Compiled> {
    if budget.deltas.is_empty() || budget.deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidInput(
            "budget windows must be positive".into(),
        ));
    }
    if expr.depth() > fit.max_depth {
        return Err(Error::InvalidInput(format!(
            "expression depth {} exceeds the configured maximum {}",
            expr.depth(),
            fit.max_depth
        )));
    }
    let schedule = lower(expr, 0, pots, budget, fit)?;
    Ok(Compiled {
        schedule,
        exponent: expr.eval(pots),
    })
}

fn lower(
    expr: &SaturationExpr,
    level: usize,
    pots: &PotentialSet,
    budget: &CompileBudget,
    fit: &FitConfig,
) -> Result<ControlSchedule> {
    let width = pots.width();
    match expr {
        SaturationExpr::Leaf(c) => {
            if c.iter().all(|v| *v == 0.0) {
                Ok(ControlSchedule::new(width))
            } else {
                impulse_schedule(c, budget.impulse(level), width)
            }
        }
        SaturationExpr::Sum(children) => {
            let mut out = ControlSchedule::new(width);
            for c in children {
                out.extend(&lower(c, level, pots, budget, fit)?)?;
            }
            Ok(out)
        }
        SaturationExpr::BApply(child) => {
            let one = pots.constant_coeffs().ok_or_else(|| {
                Error::InvalidInput("B-terms need constants in the span of the potentials".into())
            })?;
            let phi1 = child.eval(pots);
            let shift = -phi1.min_fine(4) + 0.1;
            let shifted = child.add_leaf(&one.iter().map(|v| v * shift).collect::<Vec<_>>());
            let delta = budget.delta(level);
            let a = delta.powf(-0.5);
            let plus = shifted.scale(a).expect("positive scale");
            let minus = match shifted.scale(-a) {
                Some(e) => e,
                None => {
                    let field = shifted.eval(pots).scaled(-a);
                    let cfg = FitConfig {
                        max_depth: shifted.depth(),
                        ..fit.clone()
                    };
                    let refit = fit_best(&field, pots, &cfg)?;
                    let rel = refit.residual / field.hs_norm(fit.s).max(1e-300);
                    if rel > 1e-8 {
                        return Err(Error::Budget(format!(
                            "cannot express the negated window exponent of {} (relative residual {rel:e})",
                            expr.describe()
                        )));
                    }
                    refit.expr
                }
            };
            let mut out = lower(&minus, level + 1, pots, budget, fit)?;
            out.extend(&ControlSchedule::free(width, delta)?)?;
            out.extend(&lower(&plus, level + 1, pots, budget, fit)?)?;
            Ok(out)
        }
    }
}

fn simulation_options(opts: &SolverOptions) -> SolverOptions {
    SolverOptions {
        formulation: Formulation::Auto,
        record: solver::Record::Times(Vec::new()),
        ..opts.clone()
    }
}

#[derive(Debug, Clone)]
pub struct VerifiedCompile {
    pub compiled: Compiled,
    pub budget: CompileBudget,
    pub error: f64,
    /// Error at every rung of the ladder, in ladder order.
    pub ladder_errors: Vec<f64>,
}

/// Compiles at every rung of `ladder` (in parallel), simulates from ψ₀ and
/// returns the coarsest rung whose final H^s error against e^{eval(expr)}ψ₀
/// is below `eps`. On failure the top-level factors that miss their share
/// ε/(3·fanout) are named.
#[allow(clippy::too_many_arguments)]
pub fn compile_verified(
    expr: &SaturationExpr,
    psi0: &TorusField,
    pots: &PotentialSet,
    opts: &SolverOptions,
    ladder: &[CompileBudget],
    eps: f64,
    s: u32,
    fit: &FitConfig,
) -> Result<VerifiedCompile> {
    let sim = simulation_options(opts);
    let runs: Vec<Result<(Compiled, f64)>> = ladder
        .par_iter()
        .map(|b| {
            let c = compile_expr(expr, pots, b, fit)?;
            let target = c.predicted_target(psi0)?;
            let fin = solver::evolve(psi0, &c.schedule, pots, &sim)?;
            let err = (&fin - &target).hs_norm(s);
            Ok((c, err))
        })
        .collect();
    let ladder_errors: Vec<f64> = runs
        .iter()
        .map(|r| r.as_ref().map(|(_, e)| *e).unwrap_or(f64::INFINITY))
        .collect();
    for (run, budget) in runs.into_iter().zip(ladder) {
        if let Ok((compiled, error)) = run {
            if error < eps {
                return Ok(VerifiedCompile {
                    compiled,
                    budget: budget.clone(),
                    error,
                    ladder_errors,
                });
            }
        }
    }
    let finest = ladder
        .last()
        .ok_or_else(|| Error::InvalidInput("empty budget ladder".into()))?;
    let share = eps / (3.0 * expr.fanout() as f64);
    let mut offenders = Vec::new();
    if let SaturationExpr::Sum(children) = expr {
        for c in children {
            let err = compile_expr(c, pots, finest, fit)
                .and_then(|cc| {
                    let t = cc.predicted_target(psi0)?;
                    let f = solver::evolve(psi0, &cc.schedule, pots, &sim)?;
                    Ok((&f - &t).hs_norm(s))
                })
                .unwrap_or(f64::INFINITY);
            if err > share {
                offenders.push(format!(
                    "{} (error {err:.3e} > share {share:.3e})",
                    c.describe()
                ));
            }
        }
    } else {
        offenders.push(expr.describe());
    }
    Err(Error::Budget(format!(
        "no rung met ε = {eps:e}; ladder errors {ladder_errors:?}; offending subtree(s): {}",
        offenders.join("; ")
    )))
}

// ---------------------------------------------------------------------------
// steering pipelines

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteerConfig {
    pub fit: FitConfig,
    pub ladder: Vec<CompileBudget>,
    /// Cutoff width around the zero set of the states.
    pub eta: f64,
    /// Heat-kernel smoothing time applied to the cutoff exponent.
    pub smoothing: f64,
}

impl Default for SteerConfig {
    fn default() -> Self {
        SteerConfig {
            fit: FitConfig::default(),
            ladder: default_ladder(),
            eta: 0.2,
            smoothing: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteerOutcome {
    pub schedule: ControlSchedule,
    pub final_state: TorusField,
    /// (s, ‖ψ(τ) − ψ₁‖_{H^s})
    pub errors: Vec<(u32, f64)>,
    pub fit_residuals: Vec<f64>,
    pub budget: Option<CompileBudget>,
}

impl SteerOutcome {
    pub fn error(&self, s: u32) -> Option<f64> {
        self.errors.iter().find(|(k, _)| *k == s).map(|(_, e)| *e)
    }
}

/// Null steering by one negative constant impulse followed by free
/// evolution: the impulse multiplies ψ₀ by e^{−c}.
pub fn null_steer(
    psi0: &TorusField,
    eps: f64,
    t: f64,
    s: u32,
    pots: &PotentialSet,
    opts: &SolverOptions,
) -> Result<ControlSchedule> {
    let width = pots.width();
    let one = pots.constant_coeffs().ok_or_else(|| {
        Error::InvalidInput(
            "null steering needs the constant 1 in the span of the potentials".into(),
        )
    })?;
    let norm0 = psi0.hs_norm(s);
    if norm0 == 0.0 {
        return Ok(ControlSchedule::new(width));
    }
    let sim = simulation_options(opts);
    let free = ControlSchedule::free(width, t)?;
    let fin = solver::evolve(psi0, &free, pots, &sim)?;
    if fin.hs_norm(s) < eps {
        return Ok(free);
    }
    let delta = (t / 10.0).min(1e-3);
    let mut c = (4.0 * norm0 / eps).ln().max(0.0);
    let mut last = f64::INFINITY;
    for _ in 0..8 {
        let leaf: Vec<f64> = one.iter().map(|v| -c * v).collect();
        let mut sched = impulse_schedule(&leaf, delta, width)?;
        sched.extend(&ControlSchedule::free(width, t - delta)?)?;
        let fin = solver::evolve(psi0, &sched, pots, &sim)?;
        last = fin.hs_norm(s);
        if last < eps {
            return Ok(sched);
        }
        c += 10f64.ln();
    }
    Err(Error::Budget(format!(
        "null steering reached only {last:e} > {eps:e}"
    )))
}

fn log_field(f: &TorusField) -> Result<TorusField> {
    solver::to_log(f)
}

/// ρ_η(x): 0 on the zero set of ψ₀ψ₁, rising as a squared-cosine ramp to 1
/// at distance η.
fn cutoff(psi0: &TorusField, psi1: &TorusField, eta: f64) -> Vec<f64> {
    let dim = psi0.dim();
    let n = psi0.modes_per_axis();
    let g0 = psi0.grid_values();
    let g1 = psi1.grid_values();
    let scale = g0.iter().chain(&g1).fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = 1e-8 * scale;
    let total = g0.len();
    let coords = |idx: usize| -> Vec<f64> {
        let mut x = vec![0.0; dim];
        let mut rem = idx;
        for a in (0..dim).rev() {
            x[a] = 2.0 * PI * (rem % n) as f64 / n as f64;
            rem /= n;
        }
        x
    };
    let zeros: Vec<Vec<f64>> = (0..total)
        .filter(|&i| g0[i].abs() <= tiny || g1[i].abs() <= tiny)
        .map(coords)
        .collect();
    (0..total)
        .map(|i| {
            if zeros.is_empty() {
                return 1.0;
            }
            let x = coords(i);
            let dist = zeros
                .iter()
                .map(|z| {
                    z.iter()
                        .zip(&x)
                        .map(|(a, b)| {
                            let d = (a - b).abs();
                            d.min(2.0 * PI - d).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            let r = (dist / eta).min(1.0);
            (0.5 * PI * r).sin().powi(2)
        })
        .collect()
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn run_pipeline(
    psi0: &TorusField,
    psi1: &TorusField,
    build: impl Fn(&CompileBudget) -> Result<ControlSchedule> + Sync,
    pots: &PotentialSet,
    opts: &SolverOptions,
    ladder: &[CompileBudget],
    eps: f64,
    norms: &[u32],
) -> Result<(ControlSchedule, TorusField, Vec<(u32, f64)>, CompileBudget)> {
    let sim = simulation_options(opts);
    let runs: Vec<Result<(ControlSchedule, TorusField)>> = ladder
        .par_iter()
        .map(|b| {
            let sched = build(b)?;
            let fin = solver::evolve(psi0, &sched, pots, &sim)?;
            Ok((sched, fin))
        })
        .collect();
    let mut best: Option<(f64, String)> = None;
    for (run, b) in runs.into_iter().zip(ladder) {
        match run {
            Ok((sched, fin)) => {
                let errs: Vec<(u32, f64)> = norms
                    .iter()
                    .map(|&s| (s, (&fin - psi1).hs_norm(s)))
                    .collect();
                let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
                if worst < eps {
                    return Ok((sched, fin, errs, b.clone()));
                }
                if best.as_ref().map_or(true, |(e, _)| worst < *e) {
                    best = Some((worst, format!("{errs:?} at window {:e}", b.deltas[0])));
                }
            }
            Err(e) => {
                if best.is_none() {
                    best = Some((f64::INFINITY, e.to_string()));
                }
            }
        }
    }
    let (_, diag) = best.unwrap_or((f64::INFINITY, "empty ladder".into()));
    Err(Error::Budget(format!("ε = {eps:e} not met; best {diag}")))
}

/// Approximate steering between states of the same sign pattern through the
/// cutoff exponent ρ_η log(ψ₁/ψ₀). Returns the schedule (duration ≤ T) and
/// the achieved L² error.
#[allow(clippy::too_many_arguments)]
pub fn approx_steer_same_sign(
    psi0: &TorusField,
    psi1: &TorusField,
    eps: f64,
    t: f64,
    pots: &PotentialSet,
    opts: &SolverOptions,
    cfg: &SteerConfig,
) -> Result<SteerOutcome> {
    let width = pots.width();
    if psi0.max_coeff_diff(psi1) == 0.0 {
        return Ok(SteerOutcome {
            schedule: ControlSchedule::new(width),
            final_state: psi0.clone(),
            errors: vec![(0, 0.0)],
            fit_residuals: Vec::new(),
            budget: None,
        });
    }
    let g0 = psi0.grid_values();
    let g1 = psi1.grid_values();
    let scale = g0.iter().chain(&g1).fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = 1e-8 * scale;
    for (a, b) in g0.iter().zip(&g1) {
        if a.abs() > tiny && b.abs() > tiny && a.signum() != b.signum() {
            return Err(Error::InvalidInput(
                "states have different sign patterns".into(),
            ));
        }
    }
    let rho = cutoff(psi0, psi1, cfg.eta);
    let vals: Vec<f64> = g0
        .iter()
        .zip(&g1)
        .zip(&rho)
        .map(|((a, b), r)| {
            if *r == 0.0 || a.abs() <= tiny || b.abs() <= tiny {
                0.0
            } else {
                r * (b / a).ln()
            }
        })
        .collect();
    let exponent = TorusField::from_grid(psi0.dim(), psi0.modes_per_axis(), &vals)?
        .heat_semigroup(cfg.smoothing)?;
    let fits = fit_each_depth(&exponent, pots, &cfg.fit)?;
    let mut failure = None;
    for fit in &fits {
        let build = |b: &CompileBudget| -> Result<ControlSchedule> {
            let c = compile_expr(&fit.expr, pots, b, &cfg.fit)?;
            if c.schedule.duration() > t {
                return Err(Error::Budget(format!(
                    "compiled duration {} exceeds T = {t}",
                    c.schedule.duration()
                )));
            }
            Ok(c.schedule)
        };
        match run_pipeline(psi0, psi1, build, pots, opts, &cfg.ladder, eps, &[0]) {
            Ok((schedule, final_state, errors, budget)) => {
                return Ok(SteerOutcome {
                    schedule,
                    final_state,
                    errors,
                    fit_residuals: vec![fit.residual],
                    budget: Some(budget),
                })
            }
            Err(e) => failure = Some(e),
        }
    }
    Err(failure.unwrap_or_else(|| Error::Budget("no fit available".into())))
}

/// Three-phase steering between positive states: ψ₀ → 1 with exponent
/// −ln ψ₀, a hold at the stationary state 1 (⟨u,Q⟩ = κ), then 1 → ψ₁ with
/// exponent ln ψ₁. The total duration is exactly T.
#[allow(clippy::too_many_arguments)]
pub fn approx_steer_positive(
    psi0: &TorusField,
    psi1: &TorusField,
    eps: f64,
    t: f64,
    pots: &PotentialSet,
    opts: &SolverOptions,
    cfg: &SteerConfig,
    norms: &[u32],
) -> Result<SteerOutcome> {
    for (name, f) in [("initial", psi0), ("target", psi1)] {
        let m = f.min_fine(4);
        if !(m > 0.0) {
            return Err(Error::Positivity(format!("{name} state has minimum {m:e}")));
        }
    }
    let width = pots.width();
    let phi1 = log_field(psi0)?.scaled(-1.0);
    let phi2 = log_field(psi1)?;
    let fits1 = fit_each_depth(&phi1, pots, &cfg.fit)?;
    let fits2 = fit_each_depth(&phi2, pots, &cfg.fit)?;
    let hold_u = pots.constant_control(opts.kappa)?;
    let mut failure = None;
    // shallow fits first: deeper towers are stiffer to realize
    for level in 0..fits1.len().max(fits2.len()) {
        let fit1 = &fits1[level.min(fits1.len() - 1)];
        let fit2 = &fits2[level.min(fits2.len() - 1)];
        let build = |b: &CompileBudget| -> Result<ControlSchedule> {
            let s1 = compile_expr(&fit1.expr, pots, b, &cfg.fit)?.schedule;
            let s3 = compile_expr(&fit2.expr, pots, b, &cfg.fit)?.schedule;
            let used = s1.duration() + s3.duration();
            if !(used < t) {
                return Err(Error::Budget(format!("phases need {used} ≥ T = {t}")));
            }
            let mut hold = t - used;
            // make the compensated total land on T exactly
            for _ in 0..4 {
                let total = compensated_sum([s1.duration(), hold, s3.duration()]);
                if total == t {
                    break;
                }
                hold += t - total;
            }
            let mut out = s1;
            out.extend(&ControlSchedule::constant(width, hold, hold_u.clone())?)?;
            out.extend(&s3)?;
            Ok(out)
        };
        match run_pipeline(psi0, psi1, build, pots, opts, &cfg.ladder, eps, norms) {
            Ok((schedule, final_state, errors, budget)) => {
                return Ok(SteerOutcome {
                    schedule,
                    final_state,
                    errors,
                    fit_residuals: vec![fit1.residual, fit2.residual],
                    budget: Some(budget),
                })
            }
            Err(e) => failure = Some(e),
        }
    }
    Err(failure.unwrap_or_else(|| Error::Budget("no fit available".into())))
}

/// Coordinates (c₁, s₁) of a field on T^1, for diagnostics.
pub fn first_modes(f: &TorusField) -> (f64, f64) {
    (
        f.basis_coeff(Basis::Cos(1)).unwrap_or(0.0),
        f.basis_coeff(Basis::Sin(1)).unwrap_or(0.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pots() -> PotentialSet {
        PotentialSet::preset("mtA_d1", 64).unwrap()
    }

    #[test]
    fn density_examples() {
        assert!(density_check(&GeneratorSet::new(1, vec![vec![1]]).unwrap()).passed());
        let v = density_check(&GeneratorSet::new(1, vec![vec![2]]).unwrap());
        assert_eq!(v.failures, vec![DensityFailure::Generator { index: 2 }]);
        let v = density_check(&GeneratorSet::new(2, vec![vec![1, 0], vec![0, 1]]).unwrap());
        assert_eq!(v.failures, vec![DensityFailure::Chain { components: 2 }]);
        assert!(density_check(&GeneratorSet::standard(2)).passed());
        assert!(density_check(&GeneratorSet::standard(3)).passed());
    }

    #[test]
    fn membership_of_standard_sets() {
        for d in [1usize, 2] {
            let g = GeneratorSet::standard(d);
            let p = g.potentials(16);
            assert!(g.membership_residual(&p) < 1e-10);
        }
    }

    #[test]
    fn expression_eval_and_depth() {
        let p = pots();
        let e = SaturationExpr::Sum(vec![
            SaturationExpr::Leaf(vec![1.0, 0.0, 0.0]),
            SaturationExpr::bapply(SaturationExpr::Leaf(vec![0.0, 1.0, 0.0])),
        ]);
        assert_eq!(e.depth(), 1);
        let want = TorusField::from_fn(1, 64, |x| 1.0 + x[0].sin().powi(2));
        assert!(e.eval(&p).max_coeff_diff(&want) < 1e-14);
        let scaled = e.scale(4.0).unwrap();
        assert!(scaled.eval(&p).max_coeff_diff(&want.scaled(4.0)) < 1e-13);
        assert!(e.scale(-1.0).is_none());
    }

    #[test]
    fn fit_recovers_h0_and_b_terms() {
        let p = pots();
        let cfg = FitConfig::default();
        let f = TorusField::from_fn(1, 64, |x| 0.3 - 2.0 * x[0].sin());
        let fit = exponent_fit(&f, &p, &cfg).unwrap();
        assert!(matches!(fit.expr, SaturationExpr::Leaf(_)));
        assert!(fit.residual <= 1e-10);

        let f = TorusField::from_fn(1, 64, |x| x[0].sin().powi(2));
        let fit = exponent_fit(&f, &p, &cfg).unwrap();
        assert_eq!(
            fit.expr,
            SaturationExpr::bapply(SaturationExpr::Leaf(vec![0.0, 1.0, 0.0]))
        );
        assert!(fit.residual <= 1e-10);

        let f = TorusField::from_fn(1, 64, |x| 0.5 + 0.25 * (2.0 * x[0]).cos());
        let fit = exponent_fit(&f, &p, &cfg).unwrap();
        assert!(fit.residual < 1e-6);
        assert!((&fit.expr.eval(&p) - &f).hs_norm(1) < 1e-6);
    }

    #[test]
    fn fit_reaches_degree_four_at_depth_two() {
        let p = pots();
        let f = TorusField::from_fn(1, 64, |x| {
            0.2 * (3.0 * x[0]).cos() - 0.1 * (4.0 * x[0]).sin() + 0.05 * (3.0 * x[0]).sin()
        });
        let fit = exponent_fit(&f, &p, &FitConfig::default()).unwrap();
        assert_eq!(fit.expr.depth(), 2);
        assert!((&fit.expr.eval(&p) - &f).hs_norm(1) < 1e-6);
    }

    #[test]
    fn fit_error_carries_best_expression() {
        let p = pots();
        let f = TorusField::from_fn(1, 64, |x| (9.0 * x[0]).cos());
        match exponent_fit(&f, &p, &FitConfig::default()) {
            Err(Error::FitResidual { residual, .. }) => assert!(residual > 1.0),
            other => panic!("expected a fit error, got {other:?}"),
        }
    }

    #[test]
    fn compiled_schedules_are_saturation_form() {
        let p = pots();
        let e = SaturationExpr::Sum(vec![
            SaturationExpr::bapply(SaturationExpr::Leaf(vec![0.0, 1.0, 0.0])),
            SaturationExpr::Leaf(vec![1.0, 0.0, 0.0]),
        ]);
        let c = compile_expr(&e, &p, &CompileBudget::new(1e-3), &FitConfig::default()).unwrap();
        assert!(c.schedule.is_saturation_form());
        assert_eq!(c.schedule.segments().len(), 4);
        // minus impulse, window, plus impulse, leaf impulse
        let d = c.schedule.segments()[1].duration;
        assert_eq!(d, 1e-3);
    }

    #[test]
    fn impulse_schedule_shape() {
        let s = impulse_schedule(&[1.0, 2.0, 0.0], 0.5, 5).unwrap();
        assert_eq!(
            s.segments()[0].law,
            crate::ControlLaw::Constant(vec![2.0, 4.0, 0.0, 0.0, 0.0])
        );
        assert!(impulse_schedule(&[1.0], 0.0, 3).is_err());
    }
}
