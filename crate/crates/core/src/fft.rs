//! Cached multi-dimensional complex FFTs on the cubic grid n^d.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type Plan = Arc<dyn Fft<f64>>;

fn plan(n: usize, forward: bool) -> Plan {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Plan>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((n, forward))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if forward {
                planner.plan_fft_forward(n)
            } else {
                planner.plan_fft_inverse(n)
            }
        })
        .clone()
}

fn transform(data: &mut [Complex64], n: usize, d: usize, forward: bool) {
    debug_assert_eq!(data.len(), n.pow(d as u32));
    let fft = plan(n, forward);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // innermost axis is contiguous
    fft.process_with_scratch(data, &mut scratch);
    let mut line = vec![Complex64::default(); n];
    for axis in 0..d.saturating_sub(1) {
        let stride = n.pow((d - 1 - axis) as u32);
        let outer = n.pow(axis as u32);
        for o in 0..outer {
            let base0 = o * n * stride;
            for i in 0..stride {
                let base = base0 + i;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}

/// Grid values to Fourier coefficients, f(x) = sum_k c_k e^{i k.x}.
pub fn forward(data: &mut [Complex64], n: usize, d: usize) {
    transform(data, n, d, true);
    let scale = 1.0 / data.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Fourier coefficients to grid values.
pub fn inverse(data: &mut [Complex64], n: usize, d: usize) {
    transform(data, n, d, false);
}

/// Signed wavenumber of FFT index `j` on an axis of length `n`.
#[inline]
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// FFT index of wavenumber `k` on an axis of length `n`.
#[inline]
pub fn index_of(k: i64, n: usize) -> usize {
    if k >= 0 {
        k as usize
    } else {
        (n as i64 + k) as usize
    }
}

/// Maps each index of the n^d band to its slot in the m^d padded layout.
/// Nyquist entries map to `None`; they are kept at zero throughout.
pub fn pad_map(n: usize, m: usize, d: usize) -> Vec<Option<usize>> {
    let total = n.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut target = 0usize;
        let mut nyquist = false;
        let mut mult = 1usize;
        for _ in 0..d {
            let j = rem % n;
            rem /= n;
            if j == n / 2 {
                nyquist = true;
            }
            target += index_of(wavenumber(j, n), m) * mult;
            mult *= m;
        }
        out.push(if nyquist { None } else { Some(target) });
    }
    out
}
