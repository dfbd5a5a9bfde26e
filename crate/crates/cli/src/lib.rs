//! Config-driven experiment runner: one subcommand per experiment kind,
//! each writing its resolved config, a JSON summary and CSV/SVG artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod formula;
pub mod plot;
pub mod run;

pub use config::{ExperimentConfig, Kind};
pub use run::{run, Run};
