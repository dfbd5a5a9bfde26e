//! Real fields on the 2π-periodic torus T^d held as truncated Fourier series.

use crate::error::{Error, Result};
use crate::fft;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Neg, Sub};

/// Padded grids larger than this multiple of the band are refused.
pub const MAX_PAD_FACTOR: usize = 16;

/// The normalized ground state 1/√(2π) on T^1.
pub const PHI: f64 = 0.398_942_280_401_432_7;

/// Normalized constant (2π)^{-d/2}.
pub fn ground_value(d: usize) -> f64 {
    (2.0 * PI).powf(-(d as f64) / 2.0)
}

/// A real-valued field on T^d, stored as Fourier coefficients on the FFT
/// index layout of an N^d grid (axis 0 slowest). The Nyquist modes are kept
/// at zero so that the band is symmetric and derivatives stay real.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusField {
    dim: usize,
    n: usize,
    coeffs: Vec<Complex64>,
}

/// Orthonormal eigenfunctions of -∂² on T^1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// c_0 = 1/√(2π), c_k = cos(kx)/√π
    Cos(usize),
    /// s_k = sin(kx)/√π, k ≥ 1
    Sin(usize),
}

impl Basis {
    pub fn eigenvalue(self) -> f64 {
        let k = match self {
            Basis::Cos(k) | Basis::Sin(k) => k,
        };
        (k * k) as f64
    }
}

fn check_shape(dim: usize, n: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "modes per axis must be a positive even integer, got {n}"
        )));
    }
    Ok(())
}

/// Smallest even grid size that resolves products of `degree` band-limited
/// factors without aliasing back into the band.
pub fn padded_size(n: usize, degree: usize) -> usize {
    let m = ((degree + 1) * n).div_ceil(2);
    m + (m % 2)
}

impl TorusField {
    pub fn zeros(dim: usize, n: usize) -> Self {
        check_shape(dim, n).expect("invalid field shape");
        TorusField {
            dim,
            n,
            coeffs: vec![Complex64::default(); n.pow(dim as u32)],
        }
    }

    pub fn constant(dim: usize, n: usize, value: f64) -> Self {
        let mut f = Self::zeros(dim, n);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    /// The ground state (2π)^{-d/2}.
    pub fn ground_state(dim: usize, n: usize) -> Self {
        Self::constant(dim, n, ground_value(dim))
    }

    /// Eigenfunction c_k or s_k on T^1.
    pub fn basis(n: usize, which: Basis) -> Self {
        let mut f = Self::zeros(1, n);
        match which {
            Basis::Cos(0) => f.coeffs[0] = Complex64::new(PHI, 0.0),
            Basis::Cos(k) => {
                assert!(k < n / 2, "mode {k} outside band");
                let a = 0.5 / PI.sqrt();
                f.coeffs[k] = Complex64::new(a, 0.0);
                f.coeffs[n - k] = Complex64::new(a, 0.0);
            }
            Basis::Sin(k) => {
                assert!(k >= 1 && k < n / 2, "mode {k} outside band");
                let a = 0.5 / PI.sqrt();
                // sin(kx) = (e^{ikx} - e^{-ikx}) / 2i
                f.coeffs[k] = Complex64::new(0.0, -a);
                f.coeffs[n - k] = Complex64::new(0.0, a);
            }
        }
        f
    }

    /// Samples `f` on the uniform grid x_j = 2πj/N and transforms.
    pub fn from_fn(dim: usize, n: usize, f: impl Fn(&[f64]) -> f64) -> Self {
        check_shape(dim, n).expect("invalid field shape");
        let values = grid_map(dim, n, f);
        Self::from_grid(dim, n, &values).expect("grid length matches")
    }

    pub fn from_grid(dim: usize, n: usize, values: &[f64]) -> Result<Self> {
        check_shape(dim, n)?;
        let total = n.pow(dim as u32);
        if values.len() != total {
            return Err(Error::DimensionMismatch {
                expected: format!("{total} grid values"),
                got: values.len().to_string(),
            });
        }
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft::forward(&mut data, n, dim);
        let mut f = TorusField {
            dim,
            n,
            coeffs: data,
        };
        f.project_band();
        Ok(f)
    }

    /// Builds a field from raw coefficients; the Hermitian part is kept and
    /// Nyquist modes are zeroed.
    pub fn from_coeffs(dim: usize, n: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        check_shape(dim, n)?;
        let total = n.pow(dim as u32);
        if coeffs.len() != total {
            return Err(Error::DimensionMismatch {
                expected: format!("{total} coefficients"),
                got: coeffs.len().to_string(),
            });
        }
        let mut f = TorusField { dim, n, coeffs };
        f.symmetrize();
        f.project_band();
        Ok(f)
    }

    pub(crate) fn from_coeffs_unchecked(dim: usize, n: usize, coeffs: Vec<Complex64>) -> Self {
        TorusField { dim, n, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes_per_axis(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Signed wavevector of linear index `idx`.
    pub fn wavevector(&self, idx: usize) -> Vec<i64> {
        wavevector(idx, self.n, self.dim)
    }

    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.dim {
            return None;
        }
        let half = (self.n / 2) as i64;
        let mut idx = 0usize;
        for &kj in k {
            if kj <= -half || kj > half {
                return None;
            }
            idx = idx * self.n + fft::index_of(kj, self.n);
        }
        Some(idx)
    }

    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.index_of(k).map(|i| self.coeffs[i]).unwrap_or_default()
    }

    /// |k|² for every coefficient slot.
    pub fn wavenumber_squares(&self) -> Vec<f64> {
        wavenumber_squares(self.n, self.dim)
    }

    fn same_shape(&self, other: &TorusField) -> Result<()> {
        if self.dim != other.dim || self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: format!("d={}, N={}", self.dim, self.n),
                got: format!("d={}, N={}", other.dim, other.n),
            });
        }
        Ok(())
    }

    fn assert_same_shape(&self, other: &TorusField) {
        if let Err(e) = self.same_shape(other) {
            panic!("{e}");
        }
    }

    fn symmetrize(&mut self) {
        let n = self.n;
        let d = self.dim;
        let orig = self.coeffs.clone();
        for (idx, c) in self.coeffs.iter_mut().enumerate() {
            let k = wavevector(idx, n, d);
            let neg: Vec<i64> = k.iter().map(|v| -v).collect();
            let j = linear_index(&neg, n);
            *c = 0.5 * (orig[idx] + orig[j].conj());
        }
    }

    fn project_band(&mut self) {
        let n = self.n;
        for (idx, c) in self.coeffs.iter_mut().enumerate() {
            if is_nyquist(idx, n, self.dim) {
                *c = Complex64::default();
            }
        }
        // the mean of a real field is real
        self.coeffs[0].im = 0.0;
    }

    /// Largest violation of c(-k) = conj(c(k)).
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for idx in 0..self.coeffs.len() {
            let k = self.wavevector(idx);
            let neg: Vec<i64> = k.iter().map(|v| -v).collect();
            let j = linear_index(&neg, self.n);
            worst = worst.max((self.coeffs[idx] - self.coeffs[j].conj()).norm());
        }
        worst
    }

    /// ‖f‖_{H^s}² = (2π)^d Σ (1+|k|²)^s |f̂_k|².
    pub fn hs_norm(&self, s: u32) -> f64 {
        hs_norm_coeffs(&self.coeffs, self.n, self.dim, s)
    }

    pub fn l2_norm(&self) -> f64 {
        self.hs_norm(0)
    }

    /// L² inner product.
    pub fn inner(&self, other: &TorusField) -> f64 {
        self.assert_same_shape(other);
        let vol = (2.0 * PI).powi(self.dim as i32);
        vol * self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a * b.conj()).re)
            .sum::<f64>()
    }

    /// Inner product against the orthonormal eigenbasis on T^1.
    pub fn basis_coeff(&self, which: Basis) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::InvalidInput(format!(
                "basis coefficients are defined for d = 1, got d = {}",
                self.dim
            )));
        }
        let n = self.n;
        let k = match which {
            Basis::Cos(k) | Basis::Sin(k) => k,
        };
        if k >= n / 2 {
            return Ok(0.0);
        }
        let c = self.coeffs[k];
        Ok(match which {
            Basis::Cos(0) => (2.0 * PI).sqrt() * c.re,
            Basis::Cos(_) => 2.0 * PI.sqrt() * c.re,
            Basis::Sin(0) => 0.0,
            Basis::Sin(_) => -2.0 * PI.sqrt() * c.im,
        })
    }

    /// e^{tΔ} f.
    pub fn heat_semigroup(&self, t: f64) -> Result<TorusField> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "heat semigroup needs t >= 0, got {t}"
            )));
        }
        let k2 = self.wavenumber_squares();
        let coeffs = self
            .coeffs
            .iter()
            .zip(&k2)
            .map(|(c, &q)| c * (-q * t).exp())
            .collect();
        Ok(TorusField::from_coeffs_unchecked(self.dim, self.n, coeffs))
    }

    /// ∂f/∂x_axis.
    pub fn derivative(&self, axis: usize) -> TorusField {
        assert!(axis < self.dim, "axis {axis} out of range");
        let mut out = self.clone();
        for (idx, c) in out.coeffs.iter_mut().enumerate() {
            let k = wavevector(idx, self.n, self.dim)[axis] as f64;
            *c *= Complex64::new(0.0, k);
        }
        out
    }

    pub fn laplacian(&self) -> TorusField {
        let k2 = self.wavenumber_squares();
        let coeffs = self.coeffs.iter().zip(&k2).map(|(c, &q)| -q * c).collect();
        TorusField::from_coeffs_unchecked(self.dim, self.n, coeffs)
    }

    /// Values on the N^d grid.
    pub fn grid_values(&self) -> Vec<f64> {
        let mut data = self.coeffs.clone();
        fft::inverse(&mut data, self.n, self.dim);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Values on an m^d grid (m ≥ N) by zero padding.
    pub fn grid_values_padded(&self, m: usize) -> Vec<f64> {
        assert!(m >= self.n && m % 2 == 0);
        let map = fft::pad_map(self.n, m, self.dim);
        let mut data = vec![Complex64::default(); m.pow(self.dim as u32)];
        for (c, slot) in self.coeffs.iter().zip(&map) {
            if let Some(t) = slot {
                data[*t] = *c;
            }
        }
        fft::inverse(&mut data, m, self.dim);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Transforms values on an m^d grid and truncates to this band.
    pub fn from_padded_grid(dim: usize, n: usize, m: usize, values: &[f64]) -> TorusField {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft::forward(&mut data, m, dim);
        let map = fft::pad_map(n, m, dim);
        let coeffs = map
            .iter()
            .map(|slot| slot.map(|t| data[t]).unwrap_or_default())
            .collect();
        let mut f = TorusField::from_coeffs_unchecked(dim, n, coeffs);
        f.coeffs[0].im = 0.0;
        f
    }

    /// Applies `g` pointwise on a grid padded for products of `degree`
    /// factors and projects back to the band.
    pub fn map_pointwise(&self, degree: usize, g: impl Fn(f64) -> f64) -> Result<TorusField> {
        let m = self.checked_pad(degree)?;
        let vals: Vec<f64> = self.grid_values_padded(m).into_iter().map(g).collect();
        Ok(Self::from_padded_grid(self.dim, self.n, m, &vals))
    }

    fn checked_pad(&self, degree: usize) -> Result<usize> {
        let m = padded_size(self.n, degree.max(1));
        if m > MAX_PAD_FACTOR * self.n {
            return Err(Error::Resolution(format!(
                "degree-{degree} product needs a {m}-point grid, above the {}x pad limit",
                MAX_PAD_FACTOR
            )));
        }
        Ok(m)
    }

    /// f^m with dealiasing exact for band-limited trigonometric polynomials.
    pub fn pointwise_power(&self, m: u32) -> Result<TorusField> {
        match m {
            0 => Ok(TorusField::constant(self.dim, self.n, 1.0)),
            1 => Ok(self.clone()),
            _ => self.map_pointwise(m as usize, |v| v.powi(m as i32)),
        }
    }

    /// Dealiased product f·g.
    pub fn product(&self, other: &TorusField) -> TorusField {
        self.assert_same_shape(other);
        let m = padded_size(self.n, 2);
        let a = self.grid_values_padded(m);
        let b = other.grid_values_padded(m);
        let vals: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Self::from_padded_grid(self.dim, self.n, m, &vals)
    }

    /// B(φ) = Σ_j (∂_j φ)².
    pub fn b_operator(&self) -> TorusField {
        let m = padded_size(self.n, 2);
        let mut acc = vec![0.0; m.pow(self.dim as u32)];
        for axis in 0..self.dim {
            let g = self.derivative(axis).grid_values_padded(m);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v * v;
            }
        }
        Self::from_padded_grid(self.dim, self.n, m, &acc)
    }

    /// e^{aφ} f evaluated on a doubled grid and projected to the band.
    pub fn pointwise_exp_scale(&self, phi: &TorusField, a: f64) -> Result<TorusField> {
        self.same_shape(phi)?;
        let m = padded_size(self.n, 3);
        let fv = self.grid_values_padded(m);
        let pv = phi.grid_values_padded(m);
        let mut vals = Vec::with_capacity(fv.len());
        for (f, p) in fv.iter().zip(&pv) {
            let e = a * p;
            if e > 700.0 {
                return Err(Error::Overflow(format!("e^({e:.3}) exceeds f64 range")));
            }
            vals.push(f * e.exp());
        }
        Ok(Self::from_padded_grid(self.dim, self.n, m, &vals))
    }

    pub fn min_grid(&self) -> f64 {
        self.grid_values().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max_grid(&self) -> f64 {
        self.grid_values()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum over a grid refined by `factor`.
    pub fn min_fine(&self, factor: usize) -> f64 {
        self.grid_values_padded(self.n * factor)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, a: f64) -> TorusField {
        TorusField::from_coeffs_unchecked(
            self.dim,
            self.n,
            self.coeffs.iter().map(|c| c * a).collect(),
        )
    }

    /// self + a·other
    pub fn axpy(&self, a: f64, other: &TorusField) -> TorusField {
        self.assert_same_shape(other);
        TorusField::from_coeffs_unchecked(
            self.dim,
            self.n,
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| x + a * y)
                .collect(),
        )
    }

    pub fn add_constant(&self, c: f64) -> TorusField {
        let mut out = self.clone();
        out.coeffs[0] += Complex64::new(c, 0.0);
        out
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// Spectral interpolation onto another band size.
    pub fn resample(&self, n_new: usize) -> TorusField {
        let mut out = TorusField::zeros(self.dim, n_new);
        for idx in 0..self.coeffs.len() {
            let k = self.wavevector(idx);
            if let Some(j) = out.index_of(&k) {
                if !is_nyquist(j, n_new, self.dim) {
                    out.coeffs[j] = self.coeffs[idx];
                }
            }
        }
        out
    }

    pub fn max_coeff_diff(&self, other: &TorusField) -> f64 {
        self.assert_same_shape(other);
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Writes `k,re,im` (d = 1) or `k1,k2,re,im` (d = 2) rows in canonical
    /// order k = -N/2+1, …, N/2 per axis.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = if self.dim == 1 {
            vec!["k".into()]
        } else {
            (1..=self.dim).map(|a| format!("k{a}")).collect()
        };
        header.push("re".into());
        header.push("im".into());
        wr.write_record(&header)?;
        let half = (self.n / 2) as i64;
        let total = self.coeffs.len();
        for lin in 0..total {
            // canonical lexicographic order, axis 0 slowest
            let mut rem = lin;
            let mut k = vec![0i64; self.dim];
            for a in (0..self.dim).rev() {
                k[a] = (rem % self.n) as i64 - half + 1;
                rem /= self.n;
            }
            let c = self.coeff(&k);
            let mut row: Vec<String> = k.iter().map(|v| v.to_string()).collect();
            row.push(c.re.to_string());
            row.push(c.im.to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`TorusField::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<TorusField> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let dim = headers
            .len()
            .checked_sub(2)
            .filter(|&d| d >= 1)
            .ok_or_else(|| {
                Error::InvalidInput("field CSV needs wavenumber, re and im columns".into())
            })?;
        let mut rows: Vec<(Vec<i64>, Complex64)> = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse_f = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad number `{s}`: {e}")))
            };
            let mut k = Vec::with_capacity(dim);
            for a in 0..dim {
                let s = &rec[a];
                k.push(
                    s.trim()
                        .parse::<i64>()
                        .map_err(|e| Error::InvalidInput(format!("bad wavenumber `{s}`: {e}")))?,
                );
            }
            let c = Complex64::new(parse_f(&rec[dim])?, parse_f(&rec[dim + 1])?);
            rows.push((k, c));
        }
        let total = rows.len();
        let n = (total as f64).powf(1.0 / dim as f64).round() as usize;
        if n.pow(dim as u32) != total {
            return Err(Error::InvalidInput(format!(
                "{total} rows do not form an N^{dim} band"
            )));
        }
        let mut f = TorusField::zeros(dim, n);
        for (k, c) in rows {
            let idx = f
                .index_of(&k)
                .ok_or_else(|| Error::InvalidInput(format!("wavevector {k:?} outside the band")))?;
            f.coeffs[idx] = c;
        }
        f.project_band();
        Ok(f)
    }
}

pub(crate) fn hs_norm_coeffs(coeffs: &[Complex64], n: usize, dim: usize, s: u32) -> f64 {
    let vol = (2.0 * PI).powi(dim as i32);
    let k2 = wavenumber_squares(n, dim);
    let sum: f64 = coeffs
        .iter()
        .zip(&k2)
        .map(|(c, &q)| (1.0 + q).powi(s as i32) * c.norm_sqr())
        .sum();
    (vol * sum).sqrt()
}

pub(crate) fn wavevector(idx: usize, n: usize, dim: usize) -> Vec<i64> {
    let mut k = vec![0i64; dim];
    let mut rem = idx;
    for a in (0..dim).rev() {
        k[a] = fft::wavenumber(rem % n, n);
        rem /= n;
    }
    k
}

fn linear_index(k: &[i64], n: usize) -> usize {
    k.iter()
        .fold(0usize, |acc, &kj| acc * n + fft::index_of(kj, n))
}

pub(crate) fn is_nyquist(idx: usize, n: usize, dim: usize) -> bool {
    let mut rem = idx;
    for _ in 0..dim {
        if rem % n == n / 2 {
            return true;
        }
        rem /= n;
    }
    false
}

pub(crate) fn wavenumber_squares(n: usize, dim: usize) -> Vec<f64> {
    (0..n.pow(dim as u32))
        .map(|idx| {
            wavevector(idx, n, dim)
                .iter()
                .map(|&k| (k * k) as f64)
                .sum()
        })
        .collect()
}

/// Grid coordinates x_j = 2πj/N on each axis.
pub fn grid_points(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect()
}

fn grid_map(dim: usize, n: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let xs = grid_points(n);
    let total = n.pow(dim as u32);
    let mut x = vec![0.0; dim];
    (0..total)
        .map(|idx| {
            let mut rem = idx;
            for a in (0..dim).rev() {
                x[a] = xs[rem % n];
                rem /= n;
            }
            f(&x)
        })
        .collect()
}

impl Add for &TorusField {
    type Output = TorusField;
    fn add(self, rhs: &TorusField) -> TorusField {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &TorusField {
    type Output = TorusField;
    fn sub(self, rhs: &TorusField) -> TorusField {
        self.axpy(-1.0, rhs)
    }
}

impl Neg for &TorusField {
    type Output = TorusField;
    fn neg(self) -> TorusField {
        self.scaled(-1.0)
    }
}

impl Mul<&TorusField> for f64 {
    type Output = TorusField;
    fn mul(self, rhs: &TorusField) -> TorusField {
        rhs.scaled(self)
    }
}

impl Add for TorusField {
    type Output = TorusField;
    fn add(self, rhs: TorusField) -> TorusField {
        &self + &rhs
    }
}

impl Sub for TorusField {
    type Output = TorusField;
    fn sub(self, rhs: TorusField) -> TorusField {
        &self - &rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 64;

    fn cos_k(k: f64) -> TorusField {
        TorusField::from_fn(1, N, move |x| (k * x[0]).cos())
    }

    #[test]
    fn hs_norm_of_basis() {
        assert!((TorusField::basis(N, Basis::Cos(0)).hs_norm(0) - 1.0).abs() < 1e-14);
        let c1 = TorusField::basis(N, Basis::Cos(1));
        assert!((c1.hs_norm(1) - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(TorusField::zeros(1, N).hs_norm(2), 0.0);
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut fields = vec![TorusField::basis(N, Basis::Cos(0))];
        for k in 1..6 {
            fields.push(TorusField::basis(N, Basis::Cos(k)));
            fields.push(TorusField::basis(N, Basis::Sin(k)));
        }
        for (i, a) in fields.iter().enumerate() {
            for (j, b) in fields.iter().enumerate() {
                // quadrature on the grid
                let dot: f64 = a
                    .grid_values()
                    .iter()
                    .zip(b.grid_values())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    * 2.0
                    * PI
                    / N as f64;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "({i},{j}) -> {dot}");
            }
        }
    }

    #[test]
    fn basis_coeff_recovers_modes() {
        let c3 = TorusField::basis(N, Basis::Cos(3));
        assert!((c3.basis_coeff(Basis::Cos(3)).unwrap() - 1.0).abs() < 1e-14);
        assert!(c3.basis_coeff(Basis::Sin(3)).unwrap().abs() < 1e-14);
        let s2 = TorusField::basis(N, Basis::Sin(2));
        assert!((s2.basis_coeff(Basis::Sin(2)).unwrap() - 1.0).abs() < 1e-14);
        let f2 = TorusField::constant(2, 8, 1.0);
        assert!(f2.basis_coeff(Basis::Cos(0)).is_err());
    }

    #[test]
    fn heat_semigroup_on_eigenfunctions() {
        let c1 = TorusField::basis(N, Basis::Cos(1));
        let out = c1.heat_semigroup(0.1).unwrap();
        assert!(out.max_coeff_diff(&c1.scaled((-0.1f64).exp())) < 1e-15);
        let c2 = TorusField::basis(N, Basis::Cos(2));
        let out = c2.heat_semigroup(0.5).unwrap();
        assert!(out.max_coeff_diff(&c2.scaled((-2.0f64).exp())) < 1e-15);
        assert_eq!(c2.heat_semigroup(0.0).unwrap(), c2);
        assert!(c2.heat_semigroup(-1.0).is_err());
    }

    #[test]
    fn b_operator_closed_forms() {
        let b = cos_k(1.0).b_operator();
        let want = TorusField::from_fn(1, N, |x| x[0].sin().powi(2));
        assert!(b.max_coeff_diff(&want) < 1e-14);
        assert!(TorusField::constant(1, N, 3.0).b_operator().hs_norm(0) < 1e-14);
        let phi = TorusField::from_fn(1, N, |x| x[0].cos() + x[0].sin());
        let want = TorusField::from_fn(1, N, |x| 1.0 - (2.0 * x[0]).sin());
        assert!(phi.b_operator().max_coeff_diff(&want) < 1e-14);
    }

    #[test]
    fn b_operator_two_dimensional() {
        let phi = TorusField::from_fn(2, 16, |x| (x[0] + x[1]).cos());
        let want = TorusField::from_fn(2, 16, |x| 2.0 * (x[0] + x[1]).sin().powi(2));
        assert!(phi.b_operator().max_coeff_diff(&want) < 1e-14);
    }

    #[test]
    fn powers() {
        let c0 = TorusField::basis(N, Basis::Cos(0));
        let p = c0.pointwise_power(3).unwrap();
        assert!((p.mean() - (2.0 * PI).powf(-1.5)).abs() < 1e-15);
        let f = cos_k(2.0);
        assert_eq!(f.pointwise_power(1).unwrap(), f);
        let sq = cos_k(1.0).pointwise_power(2).unwrap();
        let want = TorusField::from_fn(1, N, |x| 0.5 + 0.5 * (2.0 * x[0]).cos());
        assert!(sq.max_coeff_diff(&want) < 1e-15);
    }

    #[test]
    fn power_at_band_edge_is_alias_free() {
        // degree 3 trigonometric polynomial cubed has degree 9 < N/2
        let f = TorusField::from_fn(1, 32, |x| (3.0 * x[0]).cos() + 0.5 * x[0].sin());
        let p = f.pointwise_power(3).unwrap();
        let want = TorusField::from_fn(1, 32, |x| ((3.0 * x[0]).cos() + 0.5 * x[0].sin()).powi(3));
        assert!(p.max_coeff_diff(&want) < 1e-13);
        assert!(matches!(f.pointwise_power(40), Err(Error::Resolution(_))));
    }

    #[test]
    fn exp_scale() {
        let f = cos_k(3.0);
        let zero = TorusField::zeros(1, N);
        assert!(
            f.pointwise_exp_scale(&zero, 1.0)
                .unwrap()
                .max_coeff_diff(&f)
                < 1e-15
        );
        let c0 = TorusField::basis(N, Basis::Cos(0));
        let one = TorusField::constant(1, N, 1.0);
        let out = c0.pointwise_exp_scale(&one, -2.0).unwrap();
        assert!(out.max_coeff_diff(&c0.scaled((-2.0f64).exp())) < 1e-15);
        assert!(c0.pointwise_exp_scale(&one, 800.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let f = TorusField::from_fn(1, 16, |x| 0.3 + x[0].cos() - 0.1 * (2.0 * x[0]).sin());
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,re,im\n-7,"));
        let g = TorusField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(f, g);

        let h = TorusField::from_fn(2, 8, |x| (x[0] - 2.0 * x[1]).sin());
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("k1,k2,re,im\n"));
        assert_eq!(TorusField::read_csv(buf.as_slice()).unwrap(), h);
    }

    #[test]
    fn resample_preserves_band_limited_fields() {
        let f = cos_k(3.0);
        let g = f.resample(128).resample(N);
        assert_eq!(f, g);
    }
}
