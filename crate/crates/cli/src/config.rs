//! Experiment configs. One TOML file per experiment; the top-level `kind`
//! selects the schema and unknown keys are rejected everywhere.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use gradopt_core::graduated::StepsRule;
use gradopt_core::metrics::{PNorm, ThresholdStat};
use gradopt_core::noise::{Family, NormalizationKind, TailTestConfig};
use gradopt_core::objectives::{BatchSampling, ObjectiveSpec};
use gradopt_core::optim::Recording;
use gradopt_core::Preset;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SmoothSweep,
    SgdEquivalence,
    Graduated,
    Variance,
    SharpnessSweep,
    TailTest,
    Compare,
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::SmoothSweep => "smooth-sweep",
            Kind::SgdEquivalence => "sgd-equivalence",
            Kind::Graduated => "graduated",
            Kind::Variance => "variance",
            Kind::SharpnessSweep => "sharpness-sweep",
            Kind::TailTest => "tail-test",
            Kind::Compare => "compare",
        }
    }
}

/// Settings shared by every experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSumSection {
    pub n: usize,
    /// Root mean square of the perturbations, i.e. `C`.
    pub spread: f64,
    #[serde(default)]
    pub sampling: BatchSampling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid1d {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    UnitExpectedNorm,
    UnitSecondMoment,
    None,
}

impl Normalization {
    pub fn kind(&self) -> Option<NormalizationKind> {
        match self {
            Normalization::UnitExpectedNorm => Some(NormalizationKind::UnitExpectedNorm),
            Normalization::UnitSecondMoment => Some(NormalizationKind::UnitSecondMoment),
            Normalization::None => None,
        }
    }
}

fn default_n_cal() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothSweepSection {
    pub delta: f64,
    pub grid: Grid1d,
    pub n_samples: usize,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_n_cal")]
    pub n_cal: usize,
    /// Defaults to the seven reference families.
    pub distributions: Option<Vec<Family>>,
}

/// CI thresholds separating light- from heavy-tailed estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiChecks {
    pub light_ci_max: f64,
    pub heavy_ci_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothSweepConfig {
    pub kind: Kind,
    #[serde(default)]
    pub run: RunSection,
    pub objective: ObjectiveSpec,
    pub sweep: SmoothSweepSection,
    pub checks: Option<CiChecks>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceSection {
    pub x0: Vec<f64>,
    pub eta: f64,
    pub batch: usize,
    pub n_runs: usize,
    pub steps: u64,
    /// Fail when any step leaves the `4·SE` band.
    #[serde(default = "yes")]
    pub require_within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceConfig {
    pub kind: Kind,
    #[serde(default)]
    pub run: RunSection,
    pub objective: ObjectiveSpec,
    pub finite_sum: FiniteSumSection,
    pub equivalence: EquivalenceSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Explicit,
    Implicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub mode: ModeName,
    pub epsilon: f64,
    pub gamma: f64,
    /// Defaults to the strong convexity of `f_{δ_1}` when the objective
    /// reports one.
    pub sigma: Option<f64>,
    pub sigma_phases: Option<Vec<f64>>,
    /// `L_f`; defaults to the objective metadata.
    pub lipschitz: Option<f64>,
    /// `L_g`; defaults to the objective metadata.
    pub smoothness: Option<f64>,
    pub delta1: Option<f64>,
    pub eta: Option<f64>,
    pub eta1: Option<f64>,
    pub batch1: Option<usize>,
    pub preset: Option<Preset>,
    #[serde(default)]
    pub steps_rule: StepsRule,
    /// Overrides `M`.
    pub phases: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionSection {
    /// Starting points, one coordinate vector each.
    pub starts: Vec<Vec<f64>>,
    /// Seeds per start (implicit mode).
    #[serde(default = "one_usize")]
    pub n_seeds: usize,
    #[serde(default = "endpoints")]
    pub recording: Recording,
}

fn one_usize() -> usize {
    1
}

fn endpoints() -> Recording {
    Recording::Endpoints
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraduatedConfig {
    pub kind: Kind,
    #[serde(default)]
    pub run: RunSection,
    pub objective: ObjectiveSpec,
    pub finite_sum: Option<FiniteSumSection>,
    pub plan: PlanSection,
    pub execution: ExecutionSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSection {
    pub x: Vec<f64>,
    pub batches: Vec<usize>,
    pub n_draws: usize,
    /// Allowed relative error of `b·variance` against `C²`.
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct C2Section {
    pub eta: f64,
    pub epsilon: f64,
    pub batch_grid: Vec<usize>,
    pub x0: Vec<f64>,
    pub max_steps: u64,
    #[serde(default)]
    pub stat: ThresholdStat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    pub kind: Kind,
    #[serde(default)]
    pub run: RunSection,
    pub objective: ObjectiveSpec,
    pub finite_sum: FiniteSumSection,
    pub variance: VarianceSection,
    pub c2: Option<C2Section>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharpnessSection {
    pub x0: Vec<f64>,
    pub etas: Vec<f64>,
    pub batches: Vec<usize>,
    pub n_seeds: usize,
    pub steps: u64,
    pub rho: f64,
    #[serde(default)]
    pub p: PNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepChecks {
    pub max_spearman: Option<f64>,
    #[serde(default)]
    pub require_mid_best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharpnessConfig {
    pub kind: Kind,
    #[serde(default)]
    pub run: RunSection,
    pub objective: ObjectiveSpec,
    pub finite_sum: FiniteSumSection,
    pub sweep: SharpnessSection,
    pub checks: Option<SweepChecks>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSection {
    /// Defaults to the seven reference families.
    pub families: Option<Vec<Family>>,
    pub n_samples: usize,
    pub n_seeds: usize,
    #[serde(default)]
    pub thresholds: Option<TailTestConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    pub kind: Kind,
    #[serde(default)]
    pub run: RunSection,
    pub tail: TailSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Constant,
    LrDecay,
    BatchGrowth,
    Mixed,
}

impl MethodName {
    pub fn name(&self) -> &'static str {
        match self {
            MethodName::Constant => "constant",
            MethodName::LrDecay => "lr-decay",
            MethodName::BatchGrowth => "batch-growth",
            MethodName::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub methods: Vec<MethodName>,
    pub x0: Vec<f64>,
    pub eta1: f64,
    pub batch1: usize,
    pub gamma: f64,
    pub phases: usize,
    /// Gradient evaluations per phase; each method's `b_m` must divide it.
    pub samples_per_phase: Option<u64>,
    /// Alternatively the same step count in every phase. Methods that grow
    /// the batch then use more gradient evaluations and the run is refused.
    pub steps_per_phase: Option<u64>,
    pub n_seeds: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// `|x| <` this counts as reaching the global basin.
    pub basin_radius: Option<f64>,
}

fn default_bootstrap() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub kind: Kind,
    #[serde(default)]
    pub run: RunSection,
    pub objective: ObjectiveSpec,
    pub finite_sum: FiniteSumSection,
    pub compare: CompareSection,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ExperimentConfig {
    SmoothSweep(SmoothSweepConfig),
    Equivalence(EquivalenceConfig),
    Graduated(GraduatedConfig),
    Variance(VarianceConfig),
    Sharpness(SharpnessConfig),
    Tail(TailConfig),
    Compare(CompareConfig),
}

fn schema<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

impl ExperimentConfig {
    /// Parses a config, choosing the schema from `kind`. Errors carry the
    /// line, column and offending field.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let header: toml::Table = schema(text, origin)?;
        let kind: Kind = match header.get("kind") {
            None => return Err(CliError::Config(format!("{origin}: missing top-level `kind`"))),
            Some(v) => v.clone().try_into().map_err(|e| CliError::Config(format!("{origin}: kind: {e}")))?,
        };
        Ok(match kind {
            Kind::SmoothSweep => ExperimentConfig::SmoothSweep(schema(text, origin)?),
            Kind::SgdEquivalence => ExperimentConfig::Equivalence(schema(text, origin)?),
            Kind::Graduated => ExperimentConfig::Graduated(schema(text, origin)?),
            Kind::Variance => ExperimentConfig::Variance(schema(text, origin)?),
            Kind::SharpnessSweep => ExperimentConfig::Sharpness(schema(text, origin)?),
            Kind::TailTest => ExperimentConfig::Tail(schema(text, origin)?),
            Kind::Compare => ExperimentConfig::Compare(schema(text, origin)?),
        })
    }

    pub fn kind(&self) -> Kind {
        match self {
            ExperimentConfig::SmoothSweep(c) => c.kind,
            ExperimentConfig::Equivalence(c) => c.kind,
            ExperimentConfig::Graduated(c) => c.kind,
            ExperimentConfig::Variance(c) => c.kind,
            ExperimentConfig::Sharpness(c) => c.kind,
            ExperimentConfig::Tail(c) => c.kind,
            ExperimentConfig::Compare(c) => c.kind,
        }
    }

    pub fn run(&self) -> &RunSection {
        match self {
            ExperimentConfig::SmoothSweep(c) => &c.run,
            ExperimentConfig::Equivalence(c) => &c.run,
            ExperimentConfig::Graduated(c) => &c.run,
            ExperimentConfig::Variance(c) => &c.run,
            ExperimentConfig::Sharpness(c) => &c.run,
            ExperimentConfig::Tail(c) => &c.run,
            ExperimentConfig::Compare(c) => &c.run,
        }
    }

    pub fn run_mut(&mut self) -> &mut RunSection {
        match self {
            ExperimentConfig::SmoothSweep(c) => &mut c.run,
            ExperimentConfig::Equivalence(c) => &mut c.run,
            ExperimentConfig::Graduated(c) => &mut c.run,
            ExperimentConfig::Variance(c) => &mut c.run,
            ExperimentConfig::Sharpness(c) => &mut c.run,
            ExperimentConfig::Tail(c) => &mut c.run,
            ExperimentConfig::Compare(c) => &mut c.run,
        }
    }
}
