//! Experiment configuration. Every section has defaults, so a config file
//! only lists what differs; the fully resolved config is written next to
//! the artifacts of each run.

use anyhow::{bail, Context, Result};
use bilheat_core::moment::MomentOptions;
use bilheat_core::saturation::{LimitRoute, SteerConfig};
use bilheat_core::{Formulation, PotentialSet, SolverOptions};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    ApproxSteer,
    ExactSteer,
    MomentSolve,
    LimitExperiment,
    DensityCheck,
    Constants,
    AuditPotentials,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::ApproxSteer => "approx-steer",
            Kind::ExactSteer => "exact-steer",
            Kind::MomentSolve => "moment-solve",
            Kind::LimitExperiment => "limit-experiment",
            Kind::DensityCheck => "density-check",
            Kind::Constants => "constants",
            Kind::AuditPotentials => "audit-potentials",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    /// Seed of the randomized entry-ball sweep, the only random step.
    pub seed: u64,
    pub pde: PdeConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub simulate: SimulateConfig,
    pub approx_steer: ApproxSteerConfig,
    pub exact_steer: ExactSteerConfig,
    pub moment_solve: MomentSolveConfig,
    pub limit_experiment: LimitConfig,
    pub density_check: DensityConfig,
    pub constants: ConstantsConfig,
    pub audit_potentials: AuditConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    pub dim: usize,
    pub kappa: f64,
    pub p: u32,
    /// Modes per axis.
    pub n: usize,
    /// `mtA_d1`, `mtA_d2` or `mtB_five`.
    pub preset: String,
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig {
            dim: 1,
            kappa: 1.0,
            p: 2,
            n: 128,
            preset: "mtB_five".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormulationName {
    #[default]
    Direct,
    Log,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_dt: f64,
    pub formulation: FormulationName,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_dt: 1e-3,
            formulation: FormulationName::Direct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

/// Either the stationary control u_κ or an explicit constant vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlSpec {
    Named(String),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub initial: String,
    pub horizon: f64,
    /// `"stationary"`, `"free"` or a constant vector of the preset's width.
    pub control: ControlSpec,
    /// Number of equally spaced output times.
    pub samples: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            initial: "phi*(1 + 1/2*cos(x))".into(),
            horizon: 1.0,
            control: ControlSpec::Named("stationary".into()),
            samples: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteerMode {
    Positive,
    SameSign,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxSteerConfig {
    pub mode: SteerMode,
    pub initial: String,
    /// Ignored in `null` mode.
    pub target: String,
    pub horizon: f64,
    pub eps: f64,
    /// Sobolev indices at which the error is reported; the first is steered.
    pub norms: Vec<u32>,
    pub steer: SteerConfig,
}

impl Default for ApproxSteerConfig {
    fn default() -> Self {
        ApproxSteerConfig {
            mode: SteerMode::Positive,
            initial: "1 + 1/5*cos(x)".into(),
            target: "1 + 1/5*sin(x)".into(),
            horizon: 1.0,
            eps: 5e-2,
            norms: vec![1, 3],
            steer: SteerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactSteerConfig {
    pub initial: String,
    pub horizon: f64,
    pub truncation: usize,
    pub n_max: usize,
    pub stop_tol: f64,
    pub t0: f64,
    /// Control-cost exponent; fitted by the cost probe when absent.
    pub nu: Option<f64>,
    pub max_dt: f64,
    pub local_threshold: f64,
    pub max_window_steps: f64,
    pub moment: MomentOptions,
    /// Run approximate steering into the entry ball first.
    pub global: bool,
    /// Entry radius for the global pipeline; swept when absent and R_T is
    /// below round-off.
    pub entry_radius: Option<f64>,
}

impl Default for ExactSteerConfig {
    fn default() -> Self {
        let e = bilheat_core::exact::ExactConfig::default();
        ExactSteerConfig {
            initial: "phi + 1e-3*(c1 + s2)".into(),
            horizon: 1.0,
            truncation: e.truncation,
            n_max: e.n_max,
            stop_tol: e.stop_tol,
            t0: e.t0,
            nu: None,
            max_dt: e.max_dt,
            local_threshold: e.local_threshold,
            max_window_steps: e.max_window_steps,
            moment: e.moment,
            global: false,
            entry_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentSolveConfig {
    /// ξ₀, the deviation from the ground state to be nulled.
    pub initial: String,
    pub horizon: f64,
    pub truncation: usize,
    pub options: MomentOptions,
    /// When nonempty, also fit ν̂ from the cost over these horizons.
    pub cost_horizons: Vec<f64>,
    pub cost_tol: f64,
}

impl Default for MomentSolveConfig {
    fn default() -> Self {
        MomentSolveConfig {
            initial: "c5 + s3".into(),
            horizon: 0.5,
            truncation: 12,
            options: MomentOptions::default(),
            cost_horizons: Vec::new(),
            cost_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitConfig {
    pub initial: String,
    pub phi: String,
    /// Impulse coefficients u, width − 2 entries; empty means zeros.
    pub shift: Vec<f64>,
    pub deltas: Vec<f64>,
    pub route: LimitRoute,
    pub s: u32,
}

impl Default for LimitConfig {
    fn default() -> Self {
        LimitConfig {
            initial: "phi".into(),
            phi: "1 + cos(x)".into(),
            shift: Vec::new(),
            deltas: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            route: LimitRoute::Conjugated,
            s: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// Frequency vectors of L; empty means the standard set of `pde.dim`.
    pub generators: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub nu: f64,
    pub t0: f64,
    /// Defaults to the preset's ‖Q‖ constant.
    pub c_q: Option<f64>,
    pub horizon: f64,
    /// τ values at which K(τ), e^{Γ₀/τ} and N(τ) are tabulated.
    pub taus: Vec<f64>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            nu: 1.0,
            t0: 1.0,
            c_q: None,
            horizon: 1.0,
            taus: (1..=10).map(|j| j as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub truncation: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { truncation: 24 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn potentials(&self) -> Result<PotentialSet> {
        let pots = PotentialSet::preset(&self.pde.preset, self.pde.n).context("pde.preset")?;
        if pots.dim() != self.pde.dim {
            bail!(
                "pde.preset: `{}` lives on T^{}, but pde.dim = {}",
                self.pde.preset,
                pots.dim(),
                self.pde.dim
            );
        }
        Ok(pots)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let f = match self.solver.formulation {
            FormulationName::Direct => Formulation::Direct,
            FormulationName::Log => Formulation::Log,
            FormulationName::Auto => Formulation::Auto,
        };
        SolverOptions::new(self.pde.kappa, self.pde.p)
            .with_max_dt(self.solver.max_dt)
            .with_formulation(f)
    }

    pub fn exact_config(&self) -> bilheat_core::exact::ExactConfig {
        let e = &self.exact_steer;
        bilheat_core::exact::ExactConfig {
            kappa: self.pde.kappa,
            p: self.pde.p,
            truncation: e.truncation,
            n_max: e.n_max,
            stop_tol: e.stop_tol,
            t0: e.t0,
            nu: e.nu,
            max_dt: e.max_dt,
            moment: e.moment.clone(),
            local_threshold: e.local_threshold,
            max_window_steps: e.max_window_steps,
        }
    }

    /// Checks the sections `kind` reads; errors name the offending field.
    pub fn validate(&self, kind: Kind) -> Result<()> {
        if let Some(k) = self.kind {
            if k != kind {
                bail!(
                    "kind: config is for `{}` but `{}` was requested",
                    k.name(),
                    kind.name()
                );
            }
        }
        let pde = &self.pde;
        if !(1..=2).contains(&pde.dim) {
            bail!("pde.dim: must be 1 or 2, got {}", pde.dim);
        }
        if pde.n < 4 || pde.n % 2 != 0 {
            bail!("pde.n: must be an even integer ≥ 4, got {}", pde.n);
        }
        if !(pde.kappa >= 0.0) {
            bail!("pde.kappa: must be ≥ 0, got {}", pde.kappa);
        }
        if !(self.solver.max_dt > 0.0) {
            bail!(
                "solver.max_dt: must be positive, got {}",
                self.solver.max_dt
            );
        }
        if self.output.dir.as_os_str().is_empty() {
            bail!("output.dir: must not be empty");
        }
        match kind {
            Kind::Simulate => {
                positive("simulate.horizon", self.simulate.horizon)?;
                if self.simulate.samples == 0 {
                    bail!("simulate.samples: must be at least 1");
                }
                if let ControlSpec::Named(name) = &self.simulate.control {
                    if name != "stationary" && name != "free" {
                        bail!("simulate.control: expected \"stationary\", \"free\" or a vector, got \"{name}\"");
                    }
                }
            }
            Kind::ApproxSteer => {
                let a = &self.approx_steer;
                positive("approx_steer.horizon", a.horizon)?;
                positive("approx_steer.eps", a.eps)?;
                if a.norms.is_empty() {
                    bail!("approx_steer.norms: at least one Sobolev index is required");
                }
                if a.steer.ladder.is_empty() {
                    bail!("approx_steer.steer.ladder: at least one budget is required");
                }
            }
            Kind::ExactSteer => {
                let e = &self.exact_steer;
                positive("exact_steer.horizon", e.horizon)?;
                positive("exact_steer.t0", e.t0)?;
                positive("exact_steer.stop_tol", e.stop_tol)?;
                if pde.dim != 1 {
                    bail!("pde.dim: exact steering runs on T^1");
                }
                if pde.p % 2 != 0 {
                    bail!(
                        "pde.p: exact steering needs an even exponent, got {}",
                        pde.p
                    );
                }
                if e.truncation == 0 || e.truncation > bilheat_core::moment::MAX_TRUNCATION {
                    bail!(
                        "exact_steer.truncation: must be in 1..={}",
                        bilheat_core::moment::MAX_TRUNCATION
                    );
                }
                if let Some(r) = e.entry_radius {
                    positive("exact_steer.entry_radius", r)?;
                }
            }
            Kind::MomentSolve => {
                let m = &self.moment_solve;
                positive("moment_solve.horizon", m.horizon)?;
                if pde.dim != 1 {
                    bail!("pde.dim: moment problems are posed on T^1");
                }
                if m.truncation == 0 || m.truncation > bilheat_core::moment::MAX_TRUNCATION {
                    bail!(
                        "moment_solve.truncation: must be in 1..={}",
                        bilheat_core::moment::MAX_TRUNCATION
                    );
                }
                for (i, t) in m.cost_horizons.iter().enumerate() {
                    positive(&format!("moment_solve.cost_horizons[{i}]"), *t)?;
                }
                if !m.cost_horizons.is_empty() && m.cost_horizons.len() < 3 {
                    bail!("moment_solve.cost_horizons: a fit needs at least 3 horizons");
                }
            }
            Kind::LimitExperiment => {
                let l = &self.limit_experiment;
                if l.deltas.is_empty() {
                    bail!("limit_experiment.deltas: at least one δ is required");
                }
                for (i, d) in l.deltas.iter().enumerate() {
                    positive(&format!("limit_experiment.deltas[{i}]"), *d)?;
                }
            }
            Kind::DensityCheck => {
                for (i, g) in self.density_check.generators.iter().enumerate() {
                    if g.len() != pde.dim {
                        bail!(
                            "density_check.generators[{i}]: expected {} components, got {}",
                            pde.dim,
                            g.len()
                        );
                    }
                }
            }
            Kind::Constants => {
                let c = &self.constants;
                positive("constants.t0", c.t0)?;
                positive("constants.horizon", c.horizon)?;
                if !(c.nu >= 0.0) {
                    bail!("constants.nu: must be ≥ 0, got {}", c.nu);
                }
                for (i, t) in c.taus.iter().enumerate() {
                    positive(&format!("constants.taus[{i}]"), *t)?;
                }
            }
            Kind::AuditPotentials => {
                if pde.dim != 1 {
                    bail!("pde.dim: the μ audit runs on T^1");
                }
                if self.audit_potentials.truncation == 0
                    || self.audit_potentials.truncation >= pde.n / 2
                {
                    bail!("audit_potentials.truncation: must be in 1..{}", pde.n / 2);
                }
            }
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bail!("{field}: must be positive and finite, got {v}")
    }
}
