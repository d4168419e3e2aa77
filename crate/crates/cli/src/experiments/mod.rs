//! One module per experiment kind. `prepare` does all validation and object
//! construction; `execute` only computes and writes.

mod compare;
mod equivalence;
mod graduated;
mod sharpness;
mod smooth_sweep;
mod tail;
mod variance;

use std::fmt::Display;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use gradopt_core::objectives::{make_finite_sum, FiniteSum, Objective};
use gradopt_core::rng::child_seed;

use crate::config::{ExperimentConfig, FiniteSumSection};
use crate::output::OutputDir;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub derived: serde_json::Value,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

pub trait Experiment: Send + Sync {
    fn execute(&self, out: &mut OutputDir) -> Result<Report, CliError>;
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Box<dyn Experiment>, CliError> {
    Ok(match cfg {
        ExperimentConfig::SmoothSweep(c) => Box::new(smooth_sweep::SmoothSweep::prepare(c)?),
        ExperimentConfig::Equivalence(c) => Box::new(equivalence::Equivalence::prepare(c)?),
        ExperimentConfig::Graduated(c) => Box::new(graduated::Graduated::prepare(c)?),
        ExperimentConfig::Variance(c) => Box::new(variance::Variance::prepare(c)?),
        ExperimentConfig::Sharpness(c) => Box::new(sharpness::Sharpness::prepare(c)?),
        ExperimentConfig::Tail(c) => Box::new(tail::Tail::prepare(c)?),
        ExperimentConfig::Compare(c) => Box::new(compare::Compare::prepare(c)?),
    })
}

// Seed streams derived from `run.seed`.
const FINITE_SUM_STREAM: u64 = 0;
const MAIN_STREAM: u64 = 1;

pub(crate) fn cfg_err(context: &str, e: impl Display) -> CliError {
    CliError::Config(format!("{context}: {e}"))
}

pub(crate) fn run_err(context: &str, e: impl Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

pub(crate) fn main_seed(seed: u64) -> u64 {
    child_seed(seed, MAIN_STREAM)
}

pub(crate) fn build_finite_sum(base: Arc<dyn Objective>, s: &FiniteSumSection, seed: u64) -> Result<FiniteSum, CliError> {
    make_finite_sum(base, s.n, s.spread, child_seed(seed, FINITE_SUM_STREAM)).map_err(|e| cfg_err("finite_sum", e))
}

pub(crate) fn check_point(field: &str, x: &[f64], dim: usize) -> Result<(), CliError> {
    if x.len() != dim {
        return Err(CliError::Config(format!("{field} has {} coordinates, the objective has {dim}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{field} must be finite")));
    }
    Ok(())
}

pub(crate) fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field} must be finite and > 0, got {v}")))
    }
}

pub(crate) fn at_least(field: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field} must be at least {min}, got {v}")))
    }
}

/// Header `prefix1..prefixd`, or just `prefix` in 1-D.
pub(crate) fn coord_cols(prefix: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=dim).map(|i| format!("{prefix}{i}")).collect()
    }
}
