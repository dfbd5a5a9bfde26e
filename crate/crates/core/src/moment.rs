//! Exponential moment problems nulling the linearization around the ground
//! state, and the explicit constants of the local exact steering result.
//!
//! Around (Φ, u_κ) the linearized equation is ∂ξ = Δξ − σξ + Φ(v₁μ₁ + v₂μ₂)
//! with σ = κpΦ^p. Mode by mode, ξ(T) = 0 reduces to
//! ∫₀^T e^{ω_k s} v(s) ds = −d_k, ω_k = k² + σ, one family per potential.

use crate::error::{ConditioningReport, Error, Result};
use crate::field::{ground_value, Basis, TorusField};
use crate::potentials::{mu_closed_form, PotentialSet};
use crate::schedule::ControlSchedule;
use crate::solver::{self, Record};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MAX_TRUNCATION: usize = 24;
const NEAR_ZERO: f64 = 1e-14;

#[derive(Debug, Clone, Serialize)]
pub struct MomentProblem {
    pub horizon: f64,
    pub truncation: usize,
    pub kappa: f64,
    pub p: u32,
    /// σ = κpΦ^p; the unknown is v itself, so the exponents are k² + σ
    /// (equivalently ṽ = e^{σs}v with exponents k²).
    pub sigma: f64,
    /// d_k¹ = ⟨ξ₀,c_k⟩/(c₀⟨μ₁,c_k⟩), k = 0..=K.
    pub cos_targets: Vec<f64>,
    /// d_k² = ⟨ξ₀,s_k⟩/(c₀⟨μ₂,s_k⟩), k = 1..=K (index k − 1).
    pub sin_targets: Vec<f64>,
    /// c₀⟨μ₁,c_k⟩ and c₀⟨μ₂,s_k⟩.
    pub cos_denominators: Vec<f64>,
    pub sin_denominators: Vec<f64>,
    pub xi0_l2: f64,
    /// ‖e^{T(Δ−σ)}P_{>K}ξ₀‖_{L²}/‖ξ₀‖_{L²}: modes the controls do not target.
    pub tail_ratio: f64,
}

impl MomentProblem {
    pub fn cos_exponent(&self, k: usize) -> f64 {
        (k * k) as f64 + self.sigma
    }
}

fn linearization_shift(kappa: f64, p: u32) -> f64 {
    kappa * p as f64 * ground_value(1).powi(p as i32)
}

fn check_one_dim(f: &TorusField, pots: &PotentialSet) -> Result<()> {
    if f.dim() != 1 || pots.dim() != 1 {
        return Err(Error::InvalidInput(
            "moment problems are posed on T^1".into(),
        ));
    }
    if f.modes_per_axis() != pots.modes_per_axis() {
        return Err(Error::DimensionMismatch {
            expected: format!("N = {}", pots.modes_per_axis()),
            got: format!("N = {}", f.modes_per_axis()),
        });
    }
    Ok(())
}

/// Moment targets of ξ₀ for the window length T and truncation K.
pub fn compute_targets(
    xi0: &TorusField,
    pots: &PotentialSet,
    kappa: f64,
    p: u32,
    horizon: f64,
    truncation: usize,
) -> Result<MomentProblem> {
    check_one_dim(xi0, pots)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if truncation > MAX_TRUNCATION {
        return Err(Error::InvalidInput(format!(
            "K = {truncation} exceeds {MAX_TRUNCATION}"
        )));
    }
    if 2 * truncation >= xi0.modes_per_axis() {
        return Err(Error::Resolution(format!(
            "K = {truncation} is not resolved by N = {}",
            xi0.modes_per_axis()
        )));
    }
    let c0 = ground_value(1);
    let sigma = linearization_shift(kappa, p);
    let mu1 = pots.mu(1);
    let mu2 = pots.mu(2);
    let mut cos_targets = Vec::with_capacity(truncation + 1);
    let mut cos_den = Vec::with_capacity(truncation + 1);
    for k in 0..=truncation {
        let den = c0 * mu1.basis_coeff(Basis::Cos(k))?;
        if den.abs() < NEAR_ZERO {
            return Err(Error::NearZeroDenominator {
                k,
                family: "cos",
                value: den,
            });
        }
        cos_den.push(den);
        cos_targets.push(xi0.basis_coeff(Basis::Cos(k))? / den);
    }
    let mut sin_targets = Vec::with_capacity(truncation);
    let mut sin_den = Vec::with_capacity(truncation);
    for k in 1..=truncation {
        let den = c0 * mu2.basis_coeff(Basis::Sin(k))?;
        if den.abs() < NEAR_ZERO {
            return Err(Error::NearZeroDenominator {
                k,
                family: "sin",
                value: den,
            });
        }
        sin_den.push(den);
        sin_targets.push(xi0.basis_coeff(Basis::Sin(k))? / den);
    }
    let xi0_l2 = xi0.l2_norm();
    let n = xi0.modes_per_axis();
    let mut tail = 0.0;
    for k in truncation + 1..n / 2 {
        let decay = (-((k * k) as f64 + sigma) * horizon).exp();
        let a = xi0.basis_coeff(Basis::Cos(k))?;
        let b = xi0.basis_coeff(Basis::Sin(k))?;
        tail += decay * decay * (a * a + b * b);
    }
    Ok(MomentProblem {
        horizon,
        truncation,
        kappa,
        p,
        sigma,
        cos_targets,
        sin_targets,
        cos_denominators: cos_den,
        sin_denominators: sin_den,
        xi0_l2,
        tail_ratio: if xi0_l2 > 0.0 {
            tail.sqrt() / xi0_l2
        } else {
            0.0
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MomentOptions {
    /// Interior nodes of the piecewise-linear H¹₀ basis (default 4K + 16).
    pub basis_size: Option<usize>,
    /// Allowed L² norm of the targeted modes at T, relative to ‖ξ₀‖.
    pub tol: f64,
    /// Relative Tikhonov weights, tried from largest to smallest; the
    /// unregularized minimum-norm solution is the last resort.
    pub weights: Vec<f64>,
    /// When false, the smallest-residual solution is returned even if it
    /// misses the tolerance.
    pub strict: bool,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions {
            basis_size: None,
            tol: 1e-7,
            weights: (8..=20).map(|e| 10f64.powi(-e)).collect(),
            strict: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentSolution {
    pub horizon: f64,
    /// Nodes 0 = t₀ < … < t_{M+1} = T.
    pub times: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    /// Terminal coefficient left in each targeted mode (L² units).
    pub cos_residuals: Vec<f64>,
    pub sin_residuals: Vec<f64>,
    pub cos_weight: f64,
    pub sin_weight: f64,
    pub v1_h1: f64,
    pub v2_h1: f64,
}

impl MomentSolution {
    /// ‖(v₁, v₂)‖_{H¹(0,T)}.
    pub fn h1_norm(&self) -> f64 {
        self.v1_h1.hypot(self.v2_h1)
    }

    /// Sampled law equal to `base` plus v₁, v₂ in the last two slots.
    pub fn schedule(&self, base: &[f64]) -> Result<ControlSchedule> {
        let width = base.len();
        if width < 2 {
            return Err(Error::InvalidInput(
                "control width must be at least 2".into(),
            ));
        }
        let values = self
            .v1
            .iter()
            .zip(&self.v2)
            .map(|(a, b)| {
                let mut u = base.to_vec();
                u[width - 2] += a;
                u[width - 1] += b;
                u
            })
            .collect();
        let mut s = ControlSchedule::new(width);
        s.push_sampled(self.times.clone(), values)?;
        Ok(s)
    }

    pub fn max_residual(&self) -> f64 {
        self.cos_residuals
            .iter()
            .chain(&self.sin_residuals)
            .fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// ∫ of the hat at t_i (width h) against e^{ω(s−T)}, split in its rising
/// and falling halves: e^{ω(t_i−T)} h (G(ωh) + F(ωh)).
fn hat_moment(omega: f64, t_i: f64, h: f64, horizon: f64) -> f64 {
    let z = omega * h;
    let (rise, fall) = if z.abs() < 1e-3 {
        (
            0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0,
            0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0,
        )
    } else {
        ((z - 1.0 + (-z).exp()) / (z * z), (z.exp_m1() - z) / (z * z))
    };
    (omega * (t_i - horizon)).exp() * h * (rise + fall)
}

struct FamilySolve {
    coeffs: Vec<f64>,
    residuals: Vec<f64>,
    weight: f64,
    h1: f64,
}

#[allow(clippy::too_many_arguments)]
fn solve_family(
    family: &'static str,
    exponents: &[f64],
    targets: &[f64],
    denominators: &[f64],
    nodes: &[f64],
    h: f64,
    horizon: f64,
    chol_l: &DMatrix<f64>,
    tol_abs: f64,
    weights: &[f64],
    strict: bool,
) -> Result<FamilySolve> {
    let m = nodes.len();
    let rows = exponents.len();
    if targets.iter().all(|d| *d == 0.0) {
        return Ok(FamilySolve {
            coeffs: vec![0.0; m],
            residuals: vec![0.0; rows],
            weight: 0.0,
            h1: 0.0,
        });
    }
    // rows in terminal units: den_k e^{−ω_k T}(∫e^{ω_k s}v + d_k)
    let a = DMatrix::from_fn(rows, m, |k, i| {
        denominators[k] * hat_moment(exponents[k], nodes[i], h, horizon)
    });
    let b = DVector::from_fn(rows, |k, _| {
        -denominators[k] * targets[k] * (-exponents[k] * horizon).exp()
    });
    // β = Lᵀα turns the H¹ norm into the Euclidean norm
    let bmat = chol_l
        .solve_lower_triangular(&a.transpose())
        .expect("Gram factor is nonsingular")
        .transpose();
    // First pass in terminal units, so modes with little terminal weight
    // cost little control; the row-equilibrated pass recovers precision on
    // badly scaled short horizons.
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    let mut spectrum = Vec::new();
    for equilibrate in [false, true] {
        let scale: Vec<f64> = (0..rows)
            .map(|k| {
                if equilibrate {
                    1.0 / bmat.row(k).norm().max(f64::MIN_POSITIVE)
                } else {
                    1.0
                }
            })
            .collect();
        let beq = DMatrix::from_fn(rows, m, |k, i| bmat[(k, i)] * scale[k]);
        let bvec = DVector::from_fn(rows, |k, _| b[k] * scale[k]);
        let svd = beq.svd(true, true);
        let u = svd.u.as_ref().expect("requested");
        let vt = svd.v_t.as_ref().expect("requested");
        let s = &svd.singular_values;
        let smax = s.max();
        let ub = u.transpose() * &bvec;
        let solve_with = |w: f64| -> DVector<f64> {
            let lam = w * smax * smax;
            let mut y = DVector::zeros(s.len());
            for i in 0..s.len() {
                if s[i] > 1e-15 * smax {
                    y[i] = s[i] / (s[i] * s[i] + lam) * ub[i];
                }
            }
            vt.transpose() * y
        };
        if spectrum.is_empty() {
            spectrum = s.iter().copied().collect();
        }
        let mut sweep: Vec<f64> = weights.to_vec();
        sweep.push(0.0);
        for &w in &sweep {
            let beta = solve_with(w);
            let res = (&bmat * &beta - &b).norm();
            if res <= tol_abs {
                best = Some((res, beta, w));
                break;
            }
            if best.as_ref().map_or(true, |(r, _, _)| res < *r) {
                best = Some((res, beta, w));
            }
        }
        if best.as_ref().is_some_and(|(r, _, _)| *r <= tol_abs) {
            break;
        }
    }
    let (res, beta, w) = best.expect("sweep is nonempty");
    if strict && res > tol_abs {
        return Err(Error::Conditioning(Box::new(ConditioningReport {
            family,
            residual: res,
            tolerance: tol_abs,
            singular_values: spectrum,
            scaled_targets: b.iter().copied().collect(),
        })));
    }
    let alpha = chol_l
        .transpose()
        .solve_upper_triangular(&beta)
        .expect("Gram factor is nonsingular");
    let residuals = (&bmat * &beta - &b).iter().copied().collect();
    Ok(FamilySolve {
        coeffs: alpha.iter().copied().collect(),
        residuals,
        weight: w,
        h1: beta.norm(),
    })
}

/// H¹(0,T) Gram matrix of the interior hats on a uniform grid of spacing h.
fn hat_gram(m: usize, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        g[(i, i)] = 2.0 * h / 3.0 + 2.0 / h;
        if i + 1 < m {
            g[(i, i + 1)] = h / 6.0 - 1.0 / h;
            g[(i + 1, i)] = h / 6.0 - 1.0 / h;
        }
    }
    g
}

/// Minimum-H¹ controls v₁, v₂ ∈ H¹₀(0,T) solving both moment families up to
/// the tolerance, piecewise linear on a uniform grid, so v(0) = v(T) = 0
/// exactly.
pub fn solve_moment(problem: &MomentProblem, opts: &MomentOptions) -> Result<MomentSolution> {
    let k = problem.truncation;
    let m = opts.basis_size.unwrap_or(4 * k + 16);
    if m < 2 * k + 2 {
        return Err(Error::InvalidInput(format!(
            "basis of {m} hats cannot meet {} constraints",
            2 * k + 1
        )));
    }
    let horizon = problem.horizon;
    let h = horizon / (m + 1) as f64;
    let nodes: Vec<f64> = (1..=m)
        .map(|i| horizon * i as f64 / (m + 1) as f64)
        .collect();
    let gram = hat_gram(m, h);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let tol_abs = opts.tol * problem.xi0_l2 / 2f64.sqrt();
    let cos_exp: Vec<f64> = (0..=k).map(|j| problem.cos_exponent(j)).collect();
    let sin_exp: Vec<f64> = (1..=k).map(|j| problem.cos_exponent(j)).collect();
    let (cos, sin) = rayon::join(
        || {
            solve_family(
                "cos",
                &cos_exp,
                &problem.cos_targets,
                &problem.cos_denominators,
                &nodes,
                h,
                horizon,
                &l,
                tol_abs,
                &opts.weights,
                opts.strict,
            )
        },
        || {
            solve_family(
                "sin",
                &sin_exp,
                &problem.sin_targets,
                &problem.sin_denominators,
                &nodes,
                h,
                horizon,
                &l,
                tol_abs,
                &opts.weights,
                opts.strict,
            )
        },
    );
    let (cos, sin) = (cos?, sin?);
    let mut times = Vec::with_capacity(m + 2);
    times.push(0.0);
    times.extend_from_slice(&nodes);
    times.push(horizon);
    let pad = |c: &[f64]| {
        let mut v = Vec::with_capacity(m + 2);
        v.push(0.0);
        v.extend_from_slice(c);
        v.push(0.0);
        v
    };
    Ok(MomentSolution {
        horizon,
        times,
        v1: pad(&cos.coeffs),
        v2: pad(&sin.coeffs),
        cos_residuals: cos.residuals,
        sin_residuals: sin.residuals,
        cos_weight: cos.weight,
        sin_weight: sin.weight,
        v1_h1: cos.h1,
        v2_h1: sin.h1,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NullReport {
    /// ‖ξ(T)‖_{L²}/‖ξ₀‖_{L²} of the linearized system under (v₁, v₂).
    pub terminal_ratio: f64,
    /// Free decay of the untargeted modes, same units.
    pub tail_ratio: f64,
}

/// Integrates the linearization (mode-wise exact) under the moment
/// controls and reports the relative terminal norm.
pub fn verify_null(
    xi0: &TorusField,
    sol: &MomentSolution,
    problem: &MomentProblem,
    pots: &PotentialSet,
) -> Result<NullReport> {
    check_one_dim(xi0, pots)?;
    let norm0 = xi0.l2_norm();
    if norm0 == 0.0 {
        return Ok(NullReport {
            terminal_ratio: 0.0,
            tail_ratio: 0.0,
        });
    }
    let sched = sol.schedule(&vec![0.0; pots.width()])?;
    let traj = solver::solve_linearized(
        xi0,
        &sched,
        pots,
        problem.kappa,
        problem.p,
        &Record::Times(Vec::new()),
        0.0,
    )?;
    Ok(NullReport {
        terminal_ratio: traj.final_state().l2_norm() / norm0,
        tail_ratio: problem.tail_ratio,
    })
}

/// Unit-L² basis functions c₀, c₁, s₁, …, c_K, s_K.
pub fn basis_ensemble(n: usize, truncation: usize) -> Vec<TorusField> {
    let mut out = vec![TorusField::basis(n, Basis::Cos(0))];
    for k in 1..=truncation {
        out.push(TorusField::basis(n, Basis::Cos(k)));
        out.push(TorusField::basis(n, Basis::Sin(k)));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub horizon: f64,
    /// max over the ensemble of ‖v‖_{H¹}/‖ξ₀‖_{L²}.
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostProbe {
    pub rows: Vec<CostRow>,
    /// Slope of ln N̂ against 1/T.
    pub nu_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Empirical control cost N̂(T) over an ensemble of initial data, and the
/// least-squares fit ln N̂(T) ≈ c + ν̂/T.
#[allow(clippy::too_many_arguments)]
pub fn control_cost_probe(
    horizons: &[f64],
    ensemble: &[TorusField],
    pots: &PotentialSet,
    kappa: f64,
    p: u32,
    truncation: usize,
    opts: &MomentOptions,
) -> Result<CostProbe> {
    if horizons.is_empty() || ensemble.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one horizon and one initial datum".into(),
        ));
    }
    let rows = horizons
        .par_iter()
        .map(|&t| {
            let mut cost: f64 = 0.0;
            for xi in ensemble {
                let norm = xi.l2_norm();
                if norm == 0.0 {
                    continue;
                }
                let prob = compute_targets(xi, pots, kappa, p, t, truncation)?;
                let sol = solve_moment(&prob, opts)?;
                cost = cost.max(sol.h1_norm() / norm);
            }
            Ok(CostRow { horizon: t, cost })
        })
        .collect::<Result<Vec<_>>>()?;
    let (nu_hat, intercept, r_squared) = if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| 1.0 / r.horizon).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.cost.max(f64::MIN_POSITIVE).ln())
            .collect();
        linear_fit(&x, &y)
    } else {
        (0.0, rows[0].cost.ln(), 1.0)
    };
    Ok(CostProbe {
        rows,
        nu_hat,
        intercept,
        r_squared,
    })
}

/// Ordinary least squares y ≈ a + b x; returns (b, a, R²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, intercept, r2)
}

// ---------------------------------------------------------------------------
// constants

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Explicit constants of the local exact steering result for given
/// (κ, p, ν, T₀, C_Q) and horizon T; N(τ) = e^{ν/τ}.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantPack {
    pub kappa: f64,
    pub p: u32,
    pub nu: f64,
    pub t0: f64,
    pub c_q: f64,
    pub horizon: f64,
    /// Σ_{j=2}^{p+1} C(p+1,j) Φ^{p+1−j}
    pub binomial_sum: f64,
    /// Σ_{j=2}^{p+1} Φ^{p+1−j}
    pub plain_sum: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma0: f64,
    pub t1: f64,
    pub t_f: f64,
    pub r_t: f64,
}

pub fn constants_pack(
    kappa: f64,
    p: u32,
    nu: f64,
    t0: f64,
    c_q: f64,
    horizon: f64,
) -> ConstantPack {
    let phi = ground_value(1);
    let mut binomial_sum = 0.0;
    let mut plain_sum = 0.0;
    for j in 2..=p + 1 {
        binomial_sum += binomial(p + 1, j) * phi.powi((p + 1 - j) as i32);
        plain_sum += phi.powi((p + 1 - j) as i32);
    }
    let pp = (p + 1) as f64;
    let gamma1 = 2.0 * kappa * pp * pp * binomial_sum;
    let gamma2 = 2.0 * kappa * pp * phi.powi(p as i32) + binomial_sum + 1.0;
    let ln_pos = |x: f64| if x > 0.0 { x.ln().max(0.0) } else { 0.0 };
    let gamma0 = 2.0 * nu + (ln_pos(gamma1) + ln_pos(c_q * c_q) + gamma2 + 8f64.ln()) / 2.0;
    let six_over = 6.0 / (PI * PI);
    let t1 = (six_over * horizon).min(1.0).min(t0);
    let t_f = horizon.min(PI * PI / 6.0).min(PI * PI * t0 / 6.0);
    ConstantPack {
        kappa,
        p,
        nu,
        t0,
        c_q,
        horizon,
        binomial_sum,
        plain_sum,
        gamma1,
        gamma2,
        gamma0,
        t1,
        t_f,
        r_t: (-6.0 * gamma0 / t1).exp(),
    }
}

impl ConstantPack {
    pub fn n_of(&self, tau: f64) -> f64 {
        (self.nu / tau).exp()
    }

    /// K(τ) from its squared definition.
    pub fn k_of(&self, tau: f64) -> f64 {
        let n = self.n_of(tau);
        let pp = (self.p + 1) as f64;
        let phi = ground_value(1);
        let pre = 2.0
            * (2.0 * self.kappa * tau * pp * pp * self.binomial_sum * (1.0 + n.powi(4))
                + self.c_q * self.c_q * n * n * (1.0 + n * n));
        let rate = 2.0 * self.kappa * pp * phi.powi(self.p as i32)
            + self.kappa * pp * self.plain_sum
            + 1.0;
        (pre * (tau * rate).exp()).sqrt()
    }

    /// A₄(σ, ‖y‖) with N(σ) replaced by `n` when given (an observed cost).
    pub fn a4(&self, sigma: f64, y_norm: f64, n: Option<f64>) -> f64 {
        let n = n.unwrap_or_else(|| self.n_of(sigma));
        let pp = (self.p + 1) as f64;
        let phi = ground_value(1);
        let mut s = 0.0;
        for j in 2..=self.p + 1 {
            s += binomial(self.p + 1, j)
                * phi.powi((self.p + 1 - j) as i32)
                * (1.0 + n.powi(2 * j as i32))
                * y_norm.powi(2 * (j as i32 - 2));
        }
        let pre =
            2.0 * self.kappa * sigma * pp * pp * s + self.c_q * self.c_q * n * n * (1.0 + n * n);
        let rate = 2.0 * self.kappa * pp * phi.powi(self.p as i32)
            + self.kappa * pp * self.binomial_sum
            + 1.0;
        2f64.sqrt() * pre.sqrt() * (sigma * rate / 2.0).exp()
    }

    /// e^{−π²Γ₀/T}/(e^{2π²Γ₀/(3T)} − 1).
    pub fn control_bound(&self) -> f64 {
        let g = PI * PI * self.gamma0 / self.horizon;
        (-g).exp() / (2.0 * g / 3.0).exp_m1()
    }
}

/// Σ_{j=0}^n j²/2^j.
pub fn series_partial(n: u32) -> f64 {
    (0..=n).map(|j| (j * j) as f64 / 2f64.powi(j as i32)).sum()
}

/// 2^{−n}(−n² − 4n + 6(2^n − 1)).
pub fn series_closed(n: u32) -> f64 {
    let nf = n as f64;
    let two_n = 2f64.powi(n as i32);
    (-nf * nf - 4.0 * nf + 6.0 * (two_n - 1.0)) / two_n
}

// ---------------------------------------------------------------------------
// potential audit

#[derive(Debug, Clone, Serialize)]
pub struct Assumption2Report {
    pub mu1_mean: f64,
    pub mu2_mean: f64,
    /// max_k |⟨μ₁,s_k⟩|, max_k |⟨μ₂,c_k⟩|
    pub cross_terms: (f64, f64),
    /// Fitted decay λ_k^{q}|coefficient| ≥ b for both families.
    pub q1: f64,
    pub b1: f64,
    pub q2: f64,
    pub b2: f64,
    /// Largest relative deviation from the closed forms (L²-normalized).
    pub closed_form_deviation: (f64, f64),
}

/// Checks the structure the moment solver relies on and fits the decay
/// exponents of ⟨μ₁,c_k⟩, ⟨μ₂,s_k⟩ for 1 ≤ k ≤ K.
pub fn assumption2_audit(pots: &PotentialSet, truncation: usize) -> Result<Assumption2Report> {
    if pots.dim() != 1 {
        return Err(Error::InvalidInput("the audit is defined on T^1".into()));
    }
    if truncation < 2 || 2 * truncation >= pots.modes_per_axis() {
        return Err(Error::InvalidInput(format!(
            "K = {truncation} outside 2..N/2"
        )));
    }
    let mu1 = pots.mu(1);
    let mu2 = pots.mu(2);
    let scale = mu1.l2_norm().max(mu2.l2_norm());
    let noise = 1e-8 * scale;
    let mu1_mean = mu1.basis_coeff(Basis::Cos(0))?;
    let mu2_mean = mu2.basis_coeff(Basis::Cos(0))?;
    if mu1_mean.abs() <= noise {
        return Err(Error::InvalidInput("⟨μ₁,c₀⟩ vanishes".into()));
    }
    if mu2_mean.abs() > noise {
        return Err(Error::InvalidInput(format!("⟨μ₂,c₀⟩ = {mu2_mean:e} ≠ 0")));
    }
    let mut cross = (0.0f64, 0.0f64);
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();
    let mut dev = (0.0f64, 0.0f64);
    let root_pi = PI.sqrt();
    for k in 1..=truncation {
        cross.0 = cross.0.max(mu1.basis_coeff(Basis::Sin(k))?.abs());
        cross.1 = cross.1.max(mu2.basis_coeff(Basis::Cos(k))?.abs());
        let a = mu1.basis_coeff(Basis::Cos(k))?;
        let b = mu2.basis_coeff(Basis::Sin(k))?;
        let ea = mu_closed_form(1, k)? / root_pi;
        let eb = mu_closed_form(2, k)? / root_pi;
        dev.0 = dev.0.max(((a - ea) / ea).abs());
        dev.1 = dev.1.max(((b - eb) / eb).abs());
        c1.push(a);
        c2.push(b);
    }
    if cross.0 > noise || cross.1 > noise {
        return Err(Error::InvalidInput(format!(
            "cross terms {cross:?} exceed quadrature noise"
        )));
    }
    let fit = |c: &[f64]| -> (f64, f64) {
        let x: Vec<f64> = (1..=c.len()).map(|k| ((k * k) as f64).ln()).collect();
        let y: Vec<f64> = c.iter().map(|v| v.abs().ln()).collect();
        let half = c.len() / 2;
        let (slope, _, _) = linear_fit(&x[half..], &y[half..]);
        let q = -slope;
        let b = c
            .iter()
            .enumerate()
            .map(|(i, v)| (((i + 1) * (i + 1)) as f64).powf(q) * v.abs())
            .fold(f64::INFINITY, f64::min);
        (q, b)
    };
    let (q1, b1) = fit(&c1);
    let (q2, b2) = fit(&c2);
    Ok(Assumption2Report {
        mu1_mean,
        mu2_mean,
        cross_terms: cross,
        q1,
        b1,
        q2,
        b2,
        closed_form_deviation: dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pots() -> PotentialSet {
        PotentialSet::preset("mtB_five", 64).unwrap()
    }

    #[test]
    fn targets_of_single_modes() {
        let p = pots();
        let c0 = ground_value(1);
        let xi = TorusField::basis(64, Basis::Cos(5));
        let prob = compute_targets(&xi, &p, 1.0, 2, 0.5, 12).unwrap();
        for (k, d) in prob.cos_targets.iter().enumerate() {
            if k == 5 {
                let want = 1.0 / (c0 * p.mu(1).basis_coeff(Basis::Cos(5)).unwrap());
                assert!((d - want).abs() <= 1e-12 * want.abs());
            } else {
                assert!(d.abs() < 1e-9 * prob.cos_targets[5].abs());
            }
        }
        assert!(prob.sin_targets.iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn mu2_targets_cancel_to_inverse_ground_value() {
        let p = pots();
        let prob = compute_targets(p.mu(2), &p, 0.0, 0, 1.0, 12).unwrap();
        for d in &prob.sin_targets {
            assert!((d - (2.0 * PI).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_data_gives_zero_control() {
        let p = pots();
        let prob = compute_targets(&TorusField::zeros(1, 64), &p, 1.0, 2, 0.5, 12).unwrap();
        let sol = solve_moment(&prob, &MomentOptions::default()).unwrap();
        assert!(sol.v1.iter().chain(&sol.v2).all(|v| *v == 0.0));
        assert_eq!(sol.max_residual(), 0.0);
    }

    #[test]
    fn hat_moments_match_quadrature() {
        for omega in [0.0, 1e-5, 0.7, 40.0, 600.0] {
            let (t_i, h, horizon) = (0.4, 0.1, 1.0);
            let hat = |s: f64| (1.0 - (s - t_i).abs() / h).max(0.0);
            let f = |s: f64| hat(s) * (omega * (s - horizon)).exp();
            let q = crate::quadrature::CompositeRule::new(t_i - h, t_i, 4, 16).integrate(f)
                + crate::quadrature::CompositeRule::new(t_i, t_i + h, 4, 16).integrate(f);
            let c = hat_moment(omega, t_i, h, horizon);
            assert!(
                (q - c).abs() <= 1e-12 * c.abs().max(1e-300),
                "{omega}: {q} vs {c}"
            );
        }
    }

    #[test]
    fn single_constraint_matches_variational_oracle() {
        // one functional ℓ(v) = ∫e^{ωs}v on H¹₀(0,T): the minimizer solves
        // −v'' + v = c e^{ωs}, v(0) = v(T) = 0. Compare norms with a fine
        // finite-difference discretization of that boundary problem.
        let p = pots();
        let xi = TorusField::basis(64, Basis::Cos(0));
        let prob = compute_targets(&xi, &p, 0.0, 0, 1.0, 0).unwrap();
        let sol = solve_moment(
            &prob,
            &MomentOptions {
                basis_size: Some(400),
                ..MomentOptions::default()
            },
        )
        .unwrap();
        let d0 = prob.cos_targets[0];
        let m = 4000;
        let h = 1.0 / m as f64;
        let n = m - 1;
        // −w'' + w = 1 with ω = 0 (κ = 0, k = 0), solved by Thomas algorithm
        let a = vec![-1.0 / (h * h); n];
        let b = vec![2.0 / (h * h) + 1.0; n];
        let mut c = vec![-1.0 / (h * h); n];
        let mut r = vec![1.0; n];
        c[0] /= b[0];
        r[0] /= b[0];
        for i in 1..n {
            let den = b[i] - a[i] * c[i - 1];
            c[i] /= den;
            r[i] = (r[i] - a[i] * r[i - 1]) / den;
        }
        for i in (0..n - 1).rev() {
            r[i] -= c[i] * r[i + 1];
        }
        let integral: f64 = r.iter().sum::<f64>() * h;
        // v = −d₀ w/∫w and ‖v‖²_{H¹} = d₀²/∫w
        let norm = d0.abs() / integral.sqrt();
        assert!(
            (sol.v1_h1 - norm).abs() < 1e-4 * norm,
            "{} vs {norm}",
            sol.v1_h1
        );
        assert_eq!(sol.v1[0], 0.0);
        assert_eq!(*sol.v1.last().unwrap(), 0.0);
    }

    #[test]
    fn nulls_a_cosine_mode() {
        let p = pots();
        let xi = TorusField::basis(64, Basis::Cos(5));
        let prob = compute_targets(&xi, &p, 1.0, 2, 0.5, 12).unwrap();
        let sol = solve_moment(&prob, &MomentOptions::default()).unwrap();
        let rep = verify_null(&xi, &sol, &prob, &p).unwrap();
        assert!(rep.terminal_ratio <= 1e-6 + rep.tail_ratio, "{rep:?}");
    }

    #[test]
    fn high_mode_decays_freely() {
        let p = pots();
        let xi = TorusField::basis(64, Basis::Sin(14));
        let prob = compute_targets(&xi, &p, 1.0, 2, 0.5, 12).unwrap();
        let sol = solve_moment(&prob, &MomentOptions::default()).unwrap();
        let rep = verify_null(&xi, &sol, &prob, &p).unwrap();
        let want = (-(196.0 + prob.sigma) * 0.5f64).exp();
        assert!((rep.terminal_ratio - want).abs() <= 1e-12 * want);
        assert!((rep.tail_ratio - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn constants_with_empty_sums() {
        let c = constants_pack(0.0, 0, 0.7, 1.0, 5.0, 1.0);
        assert_eq!(c.gamma1, 0.0);
        assert_eq!(c.gamma2, 1.0);
        let want = 2.0 * 0.7 + ((25.0f64).ln() + 1.0 + 8f64.ln()) / 2.0;
        assert!((c.gamma0 - want).abs() < 1e-12);
    }

    #[test]
    fn constants_for_cubic_nonlinearity() {
        let phi = ground_value(1);
        let c_q = PotentialSet::preset("mtB_five", 64).unwrap().c_q();
        let c = constants_pack(1.0, 2, 0.5, 1.0, c_q, 1.0);
        let direct = 2.0 * 3.0 * phi * phi + (3.0 * phi + 1.0) + 1.0;
        assert!((c.gamma2 - direct).abs() < 1e-14);
        for j in 1..=10 {
            let tau = j as f64 / 10.0;
            assert!(c.k_of(tau) <= (c.gamma0 / tau).exp());
        }
    }

    #[test]
    fn series_identity() {
        for n in 0..=30 {
            assert!((series_partial(n) - series_closed(n)).abs() < 1e-12);
        }
        // the infinite sum is 6; the remainder after n terms is (n² + 4n + 6)/2^n
        let rem = 6.0 - series_partial(50);
        assert!((rem - 2706.0 / 2f64.powi(50)).abs() < 1e-14);
        assert!((series_partial(56) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn audit_of_the_mu_pair() {
        let r = assumption2_audit(&PotentialSet::preset("mtB_five", 128).unwrap(), 32).unwrap();
        assert!(r.closed_form_deviation.0 < 1e-6 && r.closed_form_deviation.1 < 1e-6);
        assert!((r.q1 - 2.0).abs() < 0.1, "{}", r.q1);
        assert!((r.q2 - 2.5).abs() < 0.1, "{}", r.q2);
    }
}
