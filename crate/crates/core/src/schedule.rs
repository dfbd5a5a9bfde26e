//! Piecewise control laws u(t) ∈ R^{q+2}.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlLaw {
    Constant(Vec<f64>),
    /// Linear interpolation between samples; `times` run from 0 to the
    /// segment duration.
    Sampled {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub law: ControlLaw,
}

impl Segment {
    /// Local breakpoints of the law, always starting at 0 and ending at the
    /// duration.
    pub fn nodes(&self) -> Vec<f64> {
        match &self.law {
            ControlLaw::Constant(_) => vec![0.0, self.duration],
            ControlLaw::Sampled { times, .. } => times.clone(),
        }
    }

    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        match &self.law {
            ControlLaw::Constant(u) => out.copy_from_slice(u),
            ControlLaw::Sampled { times, values } => {
                let t = t.clamp(0.0, self.duration);
                let j = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                    Ok(j) => {
                        out.copy_from_slice(&values[j]);
                        return;
                    }
                    Err(j) => j.clamp(1, times.len() - 1),
                };
                let (t0, t1) = (times[j - 1], times[j]);
                let w = (t - t0) / (t1 - t0);
                for (o, (a, b)) in out.iter_mut().zip(values[j - 1].iter().zip(&values[j])) {
                    *o = a + w * (b - a);
                }
            }
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        let width = match &self.law {
            ControlLaw::Constant(u) => u.len(),
            ControlLaw::Sampled { values, .. } => values[0].len(),
        };
        let mut out = vec![0.0; width];
        self.value_into(t, &mut out);
        out
    }

    /// max_t Σ_i |u_i(t)| w_i
    pub fn weighted_sup(&self, weights: &[f64]) -> f64 {
        let norm = |u: &[f64]| u.iter().zip(weights).map(|(a, w)| a.abs() * w).sum::<f64>();
        match &self.law {
            ControlLaw::Constant(u) => norm(u),
            ControlLaw::Sampled { values, .. } => {
                values.iter().map(|u| norm(u)).fold(0.0, f64::max)
            }
        }
    }
}

/// Ordered segments; the first segment starts at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    width: usize,
    segments: Vec<Segment>,
}

/// Neumaier compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl ControlSchedule {
    pub fn new(width: usize) -> Self {
        ControlSchedule {
            width,
            segments: Vec::new(),
        }
    }

    pub fn constant(width: usize, duration: f64, u: Vec<f64>) -> Result<Self> {
        let mut s = Self::new(width);
        s.push_constant(duration, u)?;
        Ok(s)
    }

    pub fn free(width: usize, duration: f64) -> Result<Self> {
        Self::constant(width, duration, vec![0.0; width])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn duration(&self) -> f64 {
        compensated_sum(self.segments.iter().map(|s| s.duration))
    }

    /// Start time of every segment (compensated prefix sums).
    pub fn segment_starts(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.segments.len());
        for i in 0..self.segments.len() {
            out.push(compensated_sum(
                self.segments[..i].iter().map(|s| s.duration),
            ));
        }
        out
    }

    pub fn push(&mut self, seg: Segment) -> Result<()> {
        if !(seg.duration > 0.0 && seg.duration.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "segment duration must be positive and finite, got {}",
                seg.duration
            )));
        }
        match &seg.law {
            ControlLaw::Constant(u) => {
                if u.len() != self.width {
                    return Err(Error::DimensionMismatch {
                        expected: format!("{} control components", self.width),
                        got: u.len().to_string(),
                    });
                }
            }
            ControlLaw::Sampled { times, values } => {
                if times.len() < 2 || times.len() != values.len() {
                    return Err(Error::InvalidInput(
                        "sampled law needs at least two samples with matching values".into(),
                    ));
                }
                if times[0] != 0.0 || *times.last().unwrap() != seg.duration {
                    return Err(Error::InvalidInput(
                        "sample times must run from 0 to the segment duration".into(),
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput(
                        "sample times must be strictly increasing".into(),
                    ));
                }
                if values.iter().any(|v| v.len() != self.width) {
                    return Err(Error::DimensionMismatch {
                        expected: format!("{} control components", self.width),
                        got: "a sample of different width".into(),
                    });
                }
            }
        }
        self.segments.push(seg);
        Ok(())
    }

    pub fn push_constant(&mut self, duration: f64, u: Vec<f64>) -> Result<()> {
        self.push(Segment {
            duration,
            law: ControlLaw::Constant(u),
        })
    }

    pub fn push_sampled(&mut self, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<()> {
        let duration = *times
            .last()
            .ok_or_else(|| Error::InvalidInput("no samples".into()))?;
        self.push(Segment {
            duration,
            law: ControlLaw::Sampled { times, values },
        })
    }

    /// `self` followed in time by `other`.
    pub fn then(&self, other: &ControlSchedule) -> Result<ControlSchedule> {
        if self.width != other.width {
            return Err(Error::DimensionMismatch {
                expected: format!("width {}", self.width),
                got: format!("width {}", other.width),
            });
        }
        let mut out = self.clone();
        out.segments.extend(other.segments.iter().cloned());
        Ok(out)
    }

    pub fn extend(&mut self, other: &ControlSchedule) -> Result<()> {
        *self = self.then(other)?;
        Ok(())
    }

    /// Control value at global time t (right-continuous at breakpoints).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let starts = self.segment_starts();
        for (i, seg) in self.segments.iter().enumerate().rev() {
            if t >= starts[i] {
                return seg.value(t - starts[i]);
            }
        }
        vec![0.0; self.width]
    }

    /// True when every segment is constant and the last two components vanish.
    pub fn is_saturation_form(&self) -> bool {
        self.segments.iter().all(|s| match &s.law {
            ControlLaw::Constant(u) => u[self.width - 2..].iter().all(|v| *v == 0.0),
            ControlLaw::Sampled { .. } => false,
        })
    }

    /// (∫₀^T |u(t) − v(t)|² dt)^{1/2}; both schedules are piecewise linear so
    /// two-point Gauss on the merged breakpoints is exact.
    pub fn l2_distance(&self, other: &ControlSchedule) -> Result<f64> {
        if self.width != other.width {
            return Err(Error::DimensionMismatch {
                expected: format!("width {}", self.width),
                got: format!("width {}", other.width),
            });
        }
        let mut cuts: Vec<f64> = Vec::new();
        for s in [self, other] {
            for (start, seg) in s.segment_starts().into_iter().zip(&s.segments) {
                cuts.extend(seg.nodes().into_iter().map(|t| start + t));
            }
        }
        let end = self.duration().max(other.duration());
        cuts.push(0.0);
        cuts.push(end);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * end.max(1.0));
        let g = 0.5 / 3f64.sqrt();
        let mut acc = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let h = b - a;
            if h <= 0.0 {
                continue;
            }
            for x in [a + (0.5 - g) * h, a + (0.5 + g) * h] {
                let u = self.value_at(x);
                let v = other.value_at(x);
                let d2: f64 = u.iter().zip(&v).map(|(p, q)| (p - q).powi(2)).sum();
                acc += 0.5 * h * d2;
            }
        }
        Ok(acc.sqrt())
    }

    /// H¹(0,T) norm of the selected components over sampled segments; on
    /// constant segments only the L² part is counted.
    pub fn h1_norm(&self, components: &[usize]) -> f64 {
        let mut acc = 0.0;
        for seg in &self.segments {
            match &seg.law {
                ControlLaw::Constant(u) => {
                    acc += seg.duration * components.iter().map(|&i| u[i] * u[i]).sum::<f64>();
                }
                ControlLaw::Sampled { times, values } => {
                    for j in 1..times.len() {
                        let h = times[j] - times[j - 1];
                        for &i in components {
                            let (a, b) = (values[j - 1][i], values[j][i]);
                            acc += h * (a * a + a * b + b * b) / 3.0 + (b - a).powi(2) / h;
                        }
                    }
                }
            }
        }
        acc.sqrt()
    }

    /// CSV with header `t_start,t_end,u_0,…`. Constant segments give one row;
    /// sampled segments give one row per sample with t_start = t_end.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t_start".to_string(), "t_end".to_string()];
        header.extend((0..self.width).map(|i| format!("u_{i}")));
        wr.write_record(&header)?;
        for (start, seg) in self.segment_starts().into_iter().zip(&self.segments) {
            match &seg.law {
                ControlLaw::Constant(u) => {
                    let mut row = vec![start.to_string(), (start + seg.duration).to_string()];
                    row.extend(u.iter().map(|v| v.to_string()));
                    wr.write_record(&row)?;
                }
                ControlLaw::Sampled { times, values } => {
                    for (t, u) in times.iter().zip(values) {
                        let tt = (start + t).to_string();
                        let mut row = vec![tt.clone(), tt];
                        row.extend(u.iter().map(|v| v.to_string()));
                        wr.write_record(&row)?;
                    }
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}
