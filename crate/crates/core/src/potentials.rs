//! Control potentials: trigonometric saturation sets and the polynomial pair
//! (μ₁, μ₂) used for exact steering in one dimension.

use crate::error::{Error, Result};
use crate::field::{ground_value, Basis, TorusField};
use crate::quadrature::CompositeRule;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// μ₁(x) = x³(2π − x)³ on [0, 2π).
pub fn mu1(x: f64) -> f64 {
    let x = x.rem_euclid(2.0 * PI);
    (x * (2.0 * PI - x)).powi(3)
}

/// μ₂(x) = x³(x − π)³(x − 2π)³ on [0, 2π).
pub fn mu2(x: f64) -> f64 {
    let x = x.rem_euclid(2.0 * PI);
    (x * (x - PI) * (x - 2.0 * PI)).powi(3)
}

/// Closed-form raw integrals ∫₀^{2π} μ₁ cos(kx) dx (which = 1) and
/// ∫₀^{2π} μ₂ sin(kx) dx (which = 2). The L² coefficients against the
/// normalized basis are these divided by √π.
pub fn mu_closed_form(which: u8, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "no closed form at k = 0; use quadrature".into(),
        ));
    }
    let kf = k as f64;
    let x = kf * kf * PI * PI;
    match which {
        1 => Ok(96.0 * PI * (x - 15.0) / kf.powi(6)),
        2 => Ok(-864.0 * PI * (840.0 - 105.0 * x + 2.0 * x * x) / kf.powi(9)),
        _ => Err(Error::InvalidInput(format!("no potential μ{which}"))),
    }
}

fn mu_rule() -> CompositeRule {
    CompositeRule::new(0.0, 2.0 * PI, 64, 16)
}

/// Raw quadrature integral ∫₀^{2π} μ(x) trig(kx) dx.
pub fn mu_quadrature(which: u8, basis: Basis) -> f64 {
    let rule = mu_rule();
    let f: fn(f64) -> f64 = if which == 1 { mu1 } else { mu2 };
    match basis {
        Basis::Cos(k) => rule.integrate(|x| f(x) * (k as f64 * x).cos()),
        Basis::Sin(k) => rule.integrate(|x| f(x) * (k as f64 * x).sin()),
    }
}

/// Band-limited representation of μ from quadrature Fourier coefficients.
/// Sampling μ on the grid would alias its slowly decaying tail.
fn mu_field(which: u8, n: usize) -> TorusField {
    let rule = mu_rule();
    let f: fn(f64) -> f64 = if which == 1 { mu1 } else { mu2 };
    let vals: Vec<f64> = rule.nodes.iter().map(|&x| f(x)).collect();
    let mut coeffs = vec![Complex64::default(); n];
    for k in 0..n / 2 {
        let (mut c, mut s) = (0.0, 0.0);
        for ((&x, &w), &v) in rule.nodes.iter().zip(&rule.weights).zip(&vals) {
            let (sn, cs) = (k as f64 * x).sin_cos();
            c += w * v * cs;
            s += w * v * sn;
        }
        let z = Complex64::new(c, -s) / (2.0 * PI);
        coeffs[k] = z;
        if k > 0 {
            coeffs[n - k] = z.conj();
        }
    }
    TorusField::from_coeffs(1, n, coeffs).expect("shape is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[serde(rename = "mtA_d1")]
    MtAD1,
    #[serde(rename = "mtA_d2")]
    MtAD2,
    #[serde(rename = "mtB_five")]
    MtBFive,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtA_d1" => Ok(Preset::MtAD1),
            "mtA_d2" => Ok(Preset::MtAD2),
            "mtB_five" => Ok(Preset::MtBFive),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::MtAD1 => "mtA_d1",
            Preset::MtAD2 => "mtA_d2",
            Preset::MtBFive => "mtB_five",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Preset::MtAD2 => 2,
            _ => 1,
        }
    }
}

/// Q = (Q₁, …, Q_q, μ₁, μ₂) on a common band.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    name: String,
    q: usize,
    components: Vec<TorusField>,
    sup_norms: Vec<f64>,
    frequencies: Vec<Vec<i64>>,
    assumption2: bool,
}

impl PotentialSet {
    pub fn preset(name: &str, n: usize) -> Result<Self> {
        Ok(Self::from_preset(name.parse()?, n))
    }

    pub fn from_preset(preset: Preset, n: usize) -> Self {
        let mut set = match preset {
            Preset::MtAD1 | Preset::MtBFive => Self::trigonometric(1, n, &[vec![1]]),
            Preset::MtAD2 => Self::trigonometric(2, n, &[vec![1, 0], vec![1, 1]]),
        };
        set.name = preset.name().to_string();
        set.assumption2 = preset == Preset::MtBFive;
        set
    }

    /// {1, cos⟨k,x⟩, sin⟨k,x⟩ : k ∈ freqs}; in d = 1 the μ pair is attached,
    /// otherwise the last two components vanish.
    pub fn trigonometric(dim: usize, n: usize, freqs: &[Vec<i64>]) -> Self {
        let mut components = vec![TorusField::constant(dim, n, 1.0)];
        for k in freqs {
            assert_eq!(k.len(), dim, "frequency {k:?} has wrong dimension");
            let kc = k.clone();
            components.push(TorusField::from_fn(dim, n, move |x| dot(&kc, x).cos()));
            let ks = k.clone();
            components.push(TorusField::from_fn(dim, n, move |x| dot(&ks, x).sin()));
        }
        let q = components.len();
        let mut sup_norms = vec![1.0; q];
        if dim == 1 {
            components.push(mu_field(1, n));
            components.push(mu_field(2, n));
            sup_norms.push(PI.powi(6));
            sup_norms.push((2.0 * PI.powi(3) / (3.0 * 3f64.sqrt())).powi(3));
        } else {
            components.push(TorusField::zeros(dim, n));
            components.push(TorusField::zeros(dim, n));
            sup_norms.push(0.0);
            sup_norms.push(0.0);
        }
        PotentialSet {
            name: "trigonometric".into(),
            q,
            components,
            sup_norms,
            frequencies: freqs.to_vec(),
            assumption2: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// q + 2
    pub fn width(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn modes_per_axis(&self) -> usize {
        self.components[0].modes_per_axis()
    }

    pub fn components(&self) -> &[TorusField] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &TorusField {
        &self.components[i]
    }

    pub fn mu(&self, which: u8) -> &TorusField {
        &self.components[self.q + (which as usize - 1)]
    }

    pub fn frequencies(&self) -> &[Vec<i64>] {
        &self.frequencies
    }

    pub fn assumption2(&self) -> bool {
        self.assumption2
    }

    pub fn sup_norms(&self) -> &[f64] {
        &self.sup_norms
    }

    /// C_Q = max_i ‖Q_i‖_{C⁰}.
    pub fn c_q(&self) -> f64 {
        self.sup_norms.iter().copied().fold(0.0, f64::max)
    }

    /// Σ u_i Q_i.
    pub fn combine(&self, u: &[f64]) -> TorusField {
        assert!(u.len() <= self.width(), "control has too many components");
        let mut out = TorusField::zeros(self.dim(), self.modes_per_axis());
        for (ui, qi) in u.iter().zip(&self.components) {
            if *ui != 0.0 {
                out = out.axpy(*ui, qi);
            }
        }
        out
    }

    /// Least-squares coordinates of `f` over the first q components
    /// together with the L² residual.
    pub fn project_h0(&self, f: &TorusField) -> (Vec<f64>, f64) {
        let q = self.q;
        let gram =
            nalgebra::DMatrix::from_fn(q, q, |i, j| self.components[i].inner(&self.components[j]));
        let rhs = nalgebra::DVector::from_fn(q, |i, _| self.components[i].inner(f));
        let coef = gram
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| gram.svd(true, true).solve(&rhs, 1e-14).expect("svd solve"));
        let c: Vec<f64> = coef.iter().copied().collect();
        let fit = self.combine(&c);
        let res = (f - &fit).l2_norm();
        (c, res)
    }

    /// Coordinates of the constant 1 over Q₁..Q_q, if it lies in the span.
    pub fn constant_coeffs(&self) -> Option<Vec<f64>> {
        let one = TorusField::constant(self.dim(), self.modes_per_axis(), 1.0);
        let (c, res) = self.project_h0(&one);
        (res <= 1e-10).then_some(c)
    }

    /// Control vector with ⟨u, Q⟩ = value (a constant potential).
    pub fn constant_control(&self, value: f64) -> Result<Vec<f64>> {
        let c = self.constant_coeffs().ok_or_else(|| {
            Error::InvalidInput("constants are not in the span of the potentials".into())
        })?;
        let mut u: Vec<f64> = c.iter().map(|v| v * value).collect();
        u.resize(self.width(), 0.0);
        Ok(u)
    }

    /// The stationary control ⟨u_κ, Q⟩ = κΦ^p keeping the ground state fixed.
    pub fn stationary_control(&self, kappa: f64, p: u32) -> Result<Vec<f64>> {
        self.constant_control(kappa * ground_value(self.dim()).powi(p as i32))
    }

    /// Checks the structural invariants of the set.
    pub fn validate(&self) -> Result<()> {
        if self.assumption2 {
            let first = &self.components[0];
            let one = TorusField::constant(self.dim(), self.modes_per_axis(), 1.0);
            if first.max_coeff_diff(&one) > 1e-14 {
                return Err(Error::InvalidInput("Q₁ must be the constant 1".into()));
            }
        }
        if self.name.starts_with("mtA") && self.q < 2 * self.dim() + 1 {
            return Err(Error::InvalidInput(format!(
                "need q ≥ 2d+1 potentials, have {}",
                self.q
            )));
        }
        Ok(())
    }
}

fn dot(k: &[i64], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_at_k1() {
        let want1 = 96.0 * PI * (PI * PI - 15.0);
        assert!((mu_closed_form(1, 1).unwrap() - want1).abs() < 1e-10 * want1.abs());
        let want2 = -864.0 * PI * (840.0 - 105.0 * PI * PI + 2.0 * PI.powi(4));
        assert!((mu_closed_form(2, 1).unwrap() - want2).abs() < 1e-10 * want2.abs());
        assert!(mu_closed_form(1, 0).is_err());
    }

    #[test]
    fn quadrature_matches_closed_form_at_k10() {
        for (which, basis) in [(1u8, Basis::Cos(10)), (2u8, Basis::Sin(10))] {
            let q = mu_quadrature(which, basis);
            let c = mu_closed_form(which, 10).unwrap();
            assert!(((q - c) / c).abs() < 1e-8, "μ{which}: {q} vs {c}");
        }
    }

    #[test]
    fn presets() {
        let b = PotentialSet::preset("mtB_five", 64).unwrap();
        assert_eq!(b.q(), 3);
        assert_eq!(b.width(), 5);
        assert!(b.assumption2());
        b.validate().unwrap();
        let a2 = PotentialSet::preset("mtA_d2", 16).unwrap();
        assert_eq!(a2.q(), 5);
        assert_eq!(a2.dim(), 2);
        a2.validate().unwrap();
        assert!(matches!(
            PotentialSet::preset("nope", 16),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn mu_symmetries_on_grid() {
        let set = PotentialSet::preset("mtB_five", 128).unwrap();
        let n = 128;
        let m1 = set.mu(1).grid_values();
        let m2 = set.mu(2).grid_values();
        for j in 1..n {
            assert!((m1[j] - m1[n - j]).abs() < 1e-12 * PI.powi(6));
            assert!((m2[j] + m2[n - j]).abs() < 1e-12 * 1700.0);
        }
        assert!(set.mu(2).basis_coeff(Basis::Cos(0)).unwrap().abs() < 1e-9);
        assert!(set.mu(1).basis_coeff(Basis::Cos(0)).unwrap() > 1.0);
    }

    #[test]
    fn stationary_control_uses_the_constant() {
        let set = PotentialSet::preset("mtB_five", 32).unwrap();
        let u = set.stationary_control(1.0, 2).unwrap();
        assert!((u[0] - 1.0 / (2.0 * PI)).abs() < 1e-14);
        assert!(u[1..].iter().all(|v| v.abs() < 1e-14));
    }
}
