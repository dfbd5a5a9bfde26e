use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("resolution: {0}")]
    Resolution(String),

    #[error("floating overflow: {0}")]
    Overflow(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("unknown potential preset `{0}`")]
    UnknownPreset(String),

    #[error("solution blew up at t = {time} (H1 norm {norm:e})")]
    BlowUp { time: f64, norm: f64 },

    #[error("near-zero moment denominator at k = {k} ({family}): {value:e}")]
    NearZeroDenominator {
        k: usize,
        family: &'static str,
        value: f64,
    },

    #[error("moment solve failed to meet tolerance: {0}")]
    Conditioning(Box<ConditioningReport>),

    #[error("exponent fit residual {residual:e} above tolerance {tol:e}")]
    FitResidual {
        residual: f64,
        tol: f64,
        best: Box<crate::saturation::SaturationExpr>,
    },

    #[error("error budget not met: {0}")]
    Budget(String),

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("contraction failure at step {step}: |y_n| = {current:e} > |y_(n-1)| = {previous:e}")]
    Contraction {
        step: usize,
        previous: f64,
        current: f64,
        history: Vec<crate::exact::ExactSteerState>,
    },

    #[error("residual bound violated at step {step}: measured {measured:e} > bound {bound:e}")]
    BoundViolation {
        step: usize,
        measured: f64,
        bound: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Diagnostics attached to a failed moment solve.
#[derive(Debug, Clone)]
pub struct ConditioningReport {
    pub family: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub singular_values: Vec<f64>,
    pub scaled_targets: Vec<f64>,
}

impl std::fmt::Display for ConditioningReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        let smin = self.singular_values.last().copied().unwrap_or(0.0);
        write!(
            f,
            "{} family residual {:e} > {:e} (singular values {:e}..{:e})",
            self.family, self.residual, self.tolerance, smax, smin
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
