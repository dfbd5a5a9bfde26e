//! States given as formula strings, e.g. `phi*(1 + 1/2*cos(x))` or
//! `phi + 1e-3*(c1 + s2)`.
//!
//! Variables: `x` (and `y` for d = 2), `phi` (the ground value), and on T^1
//! the normalized basis `c0`, `c<k>`, `s<k>` for k < N/2. Functions and
//! constants are those of `meval` (`cos`, `sin`, `exp`, `sqrt`, `pi`, …).

use anyhow::{anyhow, bail, Result};
use bilheat_core::field::{grid_points, ground_value};
use bilheat_core::TorusField;
use std::f64::consts::PI;

pub fn parse(src: &str) -> Result<meval::Expr> {
    src.parse::<meval::Expr>()
        .map_err(|e| anyhow!("cannot parse `{src}`: {e}"))
}

/// The field whose grid values are the formula at the grid points.
pub fn field(src: &str, dim: usize, n: usize) -> Result<TorusField> {
    let expr = parse(src)?;
    if !(1..=2).contains(&dim) {
        bail!("formulas are supported on T^1 and T^2, got d = {dim}");
    }
    let xs = grid_points(n);
    let phi = ground_value(dim);
    let mut values = Vec::with_capacity(n.pow(dim as u32));
    let eval = |x: f64, y: Option<f64>| -> Result<f64> {
        let mut ctx = meval::Context::new();
        ctx.var("x", x).var("phi", phi);
        match y {
            Some(y) => {
                ctx.var("y", y);
            }
            None => {
                ctx.var("c0", 1.0 / (2.0 * PI).sqrt());
                for k in 1..n / 2 {
                    let (s, c) = (k as f64 * x).sin_cos();
                    ctx.var(format!("c{k}"), c / PI.sqrt())
                        .var(format!("s{k}"), s / PI.sqrt());
                }
            }
        }
        let v = expr
            .eval_with_context(ctx)
            .map_err(|e| anyhow!("cannot evaluate `{src}`: {e}"))?;
        if !v.is_finite() {
            bail!("`{src}` is not finite at x = {x}");
        }
        Ok(v)
    };
    if dim == 1 {
        for &x in &xs {
            values.push(eval(x, None)?);
        }
    } else {
        // row-major with the first axis slowest, as in TorusField::from_grid
        for &x in &xs {
            for &y in &xs {
                values.push(eval(x, Some(y))?);
            }
        }
    }
    Ok(TorusField::from_grid(dim, n, &values)?)
}
