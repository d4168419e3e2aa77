//! Graduated optimization plans and their execution, either explicitly by
//! gradient descent on smoothed surrogates or implicitly by SGD whose
//! learning rate and batch size realize the same `δ` ladder.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{BatchSampling, FiniteSum, SmoothedFamily};
use crate::optim::{bad_input, gd_phase, sgd_run, Phase, Recording, RunError, RunTrace, Schedule};

/// Ratio allowed between `κ/√λ` and `γ` for custom presets.
const RATIO_TOL: f64 = 1e-12;
/// Plans with more phases than this are rejected.
pub const MAX_PHASES: usize = 10_000;
/// Largest per-phase step count a plan may request.
pub const MAX_PHASE_STEPS: f64 = 1e15;

/// How `(η, b)` move between phases of an implicit plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Preset {
    /// `κ = γ`, `λ = 1`.
    LrDecay,
    /// `κ = 1`, `λ = 1/γ²`.
    BatchGrowth,
    /// `κ = √3/2`, `λ = 1.5`; only consistent with `γ = 1/√2`.
    Mixed,
    Custom { kappa: f64, lambda: f64 },
}

impl Preset {
    /// `(κ, λ)` for decay factor `gamma`, checked against `κ/√λ = γ`.
    pub fn factors(&self, gamma: f64) -> Result<(f64, f64)> {
        let (kappa, lambda) = match *self {
            Preset::LrDecay => (gamma, 1.0),
            Preset::BatchGrowth => (1.0, 1.0 / (gamma * gamma)),
            Preset::Mixed => (3f64.sqrt() / 2.0, 1.5),
            Preset::Custom { kappa, lambda } => (kappa, lambda),
        };
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::InvalidPlan(format!("kappa must lie in (0, 1], got {kappa}")));
        }
        if !(lambda >= 1.0 && lambda.is_finite()) {
            return Err(Error::InvalidPlan(format!("lambda must be >= 1, got {lambda}")));
        }
        let ratio = kappa / lambda.sqrt();
        if (ratio - gamma).abs() > RATIO_TOL * gamma {
            return Err(Error::InvalidPlan(format!(
                "kappa/sqrt(lambda) = {ratio} does not equal gamma = {gamma}"
            )));
        }
        Ok((kappa, lambda))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::LrDecay => "lr-decay",
            Preset::BatchGrowth => "batch-growth",
            Preset::Mixed => "mixed",
            Preset::Custom { .. } => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PlanMode {
    /// GD on `f_δ` with a given `δ_1` and a constant learning rate.
    Explicit { delta1: f64, eta: f64 },
    /// SGD with `δ_1 = η_1 C/√b_1`.
    Implicit { eta1: f64, batch1: usize, c: f64, preset: Preset },
}

/// Per-phase step counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum StepsRule {
    /// `T_m = ceil(H_m/ε_m)`.
    #[default]
    Theory,
    /// The same `T` in every phase.
    FixedSteps(u64),
    /// `T_m = s/b_m`, so every phase draws `s` samples; `b_m` must divide `s`.
    FixedSamples(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanInputs {
    pub epsilon: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// `σ_m` per phase; at least `M+1` entries. Defaults to `sigma` throughout.
    pub sigma_phases: Option<Vec<f64>>,
    /// `L_f`
    pub lipschitz: f64,
    /// `L_g`
    pub smoothness: f64,
    pub mode: PlanMode,
    pub steps_rule: StepsRule,
    /// Replaces the computed `M`.
    pub phase_override: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanPhase {
    /// 1-based.
    pub m: usize,
    pub delta: f64,
    pub eta: f64,
    pub batch: usize,
    /// `b_1 λ^{m−1}` before rounding.
    pub batch_real: f64,
    pub sigma: f64,
    pub epsilon_m: f64,
    pub h_m: f64,
    pub steps: u64,
    pub kappa: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraduatedPlan {
    pub inputs: PlanInputs,
    pub delta1: f64,
    pub alpha0: f64,
    /// `M`; the plan has `M+1` phases.
    pub m: usize,
    /// `ceil(log_γ(α₀ε))` before any override.
    pub m_theory: usize,
    pub phases: Vec<PlanPhase>,
}

/// `9(1−ση)δ²/(2η) + 3L_fδ/(η(2−L_gη))`.
pub fn h_constant(sigma: f64, eta: f64, delta: f64, lipschitz: f64, smoothness: f64) -> f64 {
    9.0 * (1.0 - sigma * eta) * delta * delta / (2.0 * eta) + 3.0 * lipschitz * delta / (eta * (2.0 - smoothness * eta))
}

/// `min{1/(16 L_f δ_1), 1/(√(2σ) δ_1)}`.
pub fn alpha0(lipschitz: f64, sigma: f64, delta1: f64) -> f64 {
    let a = if lipschitz > 0.0 { 1.0 / (16.0 * lipschitz * delta1) } else { f64::INFINITY };
    a.min(1.0 / ((2.0 * sigma).sqrt() * delta1))
}

/// `ceil(log_γ x)`, tolerant of rounding when `x` is an exact power of `γ`.
pub fn phase_count(gamma: f64, x: f64) -> f64 {
    (x.ln() / gamma.ln() - 1e-9).ceil()
}

/// Radius factor `2/γ − 1` bounding `‖x_m − x*_{δ_m}‖/δ_m` for `m ≥ 2`.
pub fn proof_bound_factor(gamma: f64) -> f64 {
    2.0 / gamma - 1.0
}

fn finite_pos(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl GraduatedPlan {
    pub fn build(inputs: PlanInputs) -> Result<Self> {
        let PlanInputs { epsilon, gamma, sigma, lipschitz, smoothness, .. } = inputs;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::param(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if !(0.5..1.0).contains(&gamma) {
            return Err(Error::InvalidPlan(format!(
                "gamma = {gamma} is outside [0.5, 1); basin containment between phases needs gamma in [0.5, 1)"
            )));
        }
        finite_pos("sigma", sigma)?;
        finite_pos("L_g", smoothness)?;
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::param(format!("L_f must be finite and >= 0, got {lipschitz}")));
        }

        let (delta1, first_eta, first_batch, factors) = match inputs.mode {
            PlanMode::Explicit { delta1, eta } => {
                finite_pos("delta1", delta1)?;
                finite_pos("eta", eta)?;
                (delta1, eta, 1usize, (1.0, 1.0))
            }
            PlanMode::Implicit { eta1, batch1, c, preset } => {
                finite_pos("eta1", eta1)?;
                if batch1 == 0 {
                    return Err(Error::param("batch1 must be >= 1"));
                }
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidPlan(format!("implicit plans need C > 0, got {c}")));
                }
                (eta1 * c / (batch1 as f64).sqrt(), eta1, batch1, preset.factors(gamma)?)
            }
        };

        let a0 = alpha0(lipschitz, sigma, delta1);
        if a0 * epsilon >= 1.0 {
            return Err(Error::InvalidPlan(format!(
                "alpha0 * epsilon = {} >= 1 gives a zero-phase plan",
                a0 * epsilon
            )));
        }
        let m_theory = phase_count(gamma, a0 * epsilon);
        if !(m_theory <= MAX_PHASES as f64) {
            return Err(Error::InvalidPlan(format!("plan needs {m_theory} phases, more than {MAX_PHASES}")));
        }
        let m_theory = m_theory as usize;
        let m_count = inputs.phase_override.unwrap_or(m_theory);
        if m_count > MAX_PHASES {
            return Err(Error::InvalidPlan(format!("plan needs {m_count} phases, more than {MAX_PHASES}")));
        }
        if let Some(s) = &inputs.sigma_phases {
            if s.len() < m_count + 1 {
                return Err(Error::param(format!("sigma_phases has {} entries, plan has {} phases", s.len(), m_count + 1)));
            }
        }

        let (kappa, lambda) = factors;
        let mut phases: Vec<PlanPhase> = Vec::with_capacity(m_count + 1);
        let mut delta = delta1;
        let mut batch_real = first_batch as f64;
        for m in 1..=m_count + 1 {
            if m > 1 {
                delta *= gamma;
                batch_real *= lambda;
            }
            let (eta, batch) = match inputs.mode {
                PlanMode::Explicit { eta, .. } => (eta, 1),
                PlanMode::Implicit { c, .. } => {
                    if m == 1 {
                        (first_eta, first_batch)
                    } else {
                        let b = batch_real.round().max(1.0);
                        if b > u32::MAX as f64 {
                            return Err(Error::InvalidPlan(format!("phase {m}: batch size {b} is too large")));
                        }
                        (delta * b.sqrt() / c, b as usize)
                    }
                }
            };
            let s_m = inputs.sigma_phases.as_ref().map_or(sigma, |s| s[m - 1]);
            finite_pos("sigma_m", s_m)?;
            let limit = (1.0 / s_m).min(2.0 / smoothness);
            if !(eta < limit) {
                return Err(Error::InvalidPlan(format!(
                    "phase {m}: learning rate {eta} must be below min(1/sigma_m, 2/L_g) = {limit}"
                )));
            }
            let h_m = h_constant(s_m, eta, delta, lipschitz, smoothness);
            let (epsilon_m, h_m, theory_steps) = if m <= m_count || m == 1 {
                let e = s_m * delta * delta / 2.0;
                (e, h_m, (h_m / e).ceil())
            } else {
                // the last phase keeps phase M's accuracy target and length
                let prev = phases[m - 2];
                (prev.epsilon_m, h_m, prev.steps as f64)
            };
            let steps = match inputs.steps_rule {
                StepsRule::Theory => theory_steps,
                StepsRule::FixedSteps(k) => k as f64,
                StepsRule::FixedSamples(s) => {
                    if s % batch as u64 != 0 {
                        return Err(Error::InvalidPlan(format!(
                            "phase {m}: batch size {batch} does not divide the {s} samples per phase"
                        )));
                    }
                    (s / batch as u64) as f64
                }
            };
            if !(1.0..=MAX_PHASE_STEPS).contains(&steps) {
                return Err(Error::InvalidPlan(format!("phase {m}: step count {steps} is outside [1, {MAX_PHASE_STEPS}]")));
            }
            let steps = steps as u64;
            phases.push(PlanPhase {
                m,
                delta,
                eta,
                batch,
                batch_real,
                sigma: s_m,
                epsilon_m,
                h_m,
                steps,
                kappa,
                lambda,
            });
        }

        Ok(GraduatedPlan { inputs, delta1, alpha0: a0, m: m_count, m_theory, phases })
    }

    pub fn gamma(&self) -> f64 {
        self.inputs.gamma
    }

    pub fn is_implicit(&self) -> bool {
        matches!(self.inputs.mode, PlanMode::Implicit { .. })
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.phases.iter().map(|p| p.delta).collect()
    }

    pub fn total_steps(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// `Σ T_m b_m`.
    pub fn gradient_evaluations(&self) -> u64 {
        self.phases.iter().map(|p| p.steps * p.batch as u64).sum()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.phases.iter().map(|p| Phase { eta: p.eta, batch: p.batch, steps: p.steps }).collect())
            .expect("plan phases are validated at build time")
    }

    /// Fixed-width text table, one line per phase.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>5} {:>12} {:>12} {:>8} {:>12} {:>14}\n",
            "phase", "delta", "eta", "batch", "epsilon_m", "T_m"
        );
        for p in &self.phases {
            let _ = writeln!(
                s,
                "{:>5} {:>12.6e} {:>12.6e} {:>8} {:>12.6e} {:>14}",
                p.m, p.delta, p.eta, p.batch, p.epsilon_m, p.steps
            );
        }
        s
    }
}

/// Start and end of one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub m: usize,
    pub delta: f64,
    pub x_start: Vec<f64>,
    pub x_end: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ExplicitRun {
    pub x_final: Vec<f64>,
    pub traces: Vec<RunTrace>,
    pub boundaries: Vec<Boundary>,
    /// Whether `x_1` lies in `B(x*_{δ_1}; 3δ_1)`; `None` when `x*_{δ_1}` is unknown.
    pub start_in_ball: Option<bool>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Phase `m` runs `T_m` GD steps with `η_m` on `f_{δ_m}` from the previous
/// phase's output. Batch sizes are ignored, so implicit plans run as their
/// deterministic counterpart.
pub fn run_explicit(
    plan: &GraduatedPlan,
    family: &dyn SmoothedFamily,
    x1: &[f64],
    recording: Recording,
) -> std::result::Result<ExplicitRun, RunError> {
    if x1.len() != family.dim() {
        return Err(bad_input(
            Error::param(format!("start point has dimension {}, objective {}", x1.len(), family.dim())),
            x1.len(),
        ));
    }
    let start_in_ball = family.minimizer(plan.delta1).map(|s| dist(x1, &s) < 3.0 * plan.delta1);
    let mut x = x1.to_vec();
    let mut t0 = 0;
    let mut traces = Vec::with_capacity(plan.phases.len());
    let mut boundaries = Vec::with_capacity(plan.phases.len());
    for p in &plan.phases {
        let obj = family.at(p.delta);
        let tr = gd_phase(obj.as_ref(), &x, p.eta, p.steps, p.m, p.delta, t0, recording)?;
        boundaries.push(Boundary { m: p.m, delta: p.delta, x_start: x, x_end: tr.final_x.clone() });
        x = tr.final_x.clone();
        t0 += p.steps;
        traces.push(tr);
    }
    Ok(ExplicitRun { x_final: x, traces, boundaries, start_in_ball })
}

/// SGD on `fs` following the plan's `(η_m, b_m, T_m)`.
pub fn run_implicit(
    plan: &GraduatedPlan,
    fs: &FiniteSum,
    x1: &[f64],
    sampling: BatchSampling,
    seed: u64,
    recording: Recording,
) -> std::result::Result<RunTrace, RunError> {
    if !plan.is_implicit() {
        return Err(bad_input(Error::InvalidPlan("run_implicit needs an implicit plan".into()), x1.len()));
    }
    let schedule = plan.schedule();
    if schedule.max_batch() > fs.len() {
        return Err(bad_input(
            Error::InvalidPlan(format!(
                "largest batch {} exceeds the {} components of the finite sum",
                schedule.max_batch(),
                fs.len()
            )),
            x1.len(),
        ));
    }
    sgd_run(fs, x1, &schedule, sampling, seed, recording)
}

/// Phase boundaries read off a single trace that recorded the first iterate
/// of every phase (`Full` or `Endpoints` recording).
pub fn boundaries_from_trace(plan: &GraduatedPlan, trace: &RunTrace) -> Result<Vec<Boundary>> {
    let mut starts = Vec::with_capacity(plan.phases.len() + 1);
    let mut t = 0;
    for p in &plan.phases {
        let i = trace
            .rows
            .iter()
            .position(|r| r.t == t)
            .ok_or_else(|| Error::param(format!("trace has no row at the start of phase {} (t = {t})", p.m)))?;
        starts.push(trace.iterate(i).to_vec());
        t += p.steps;
    }
    if trace.steps != t {
        return Err(Error::param(format!("trace has {} steps, plan {t}", trace.steps)));
    }
    starts.push(trace.final_x.clone());
    Ok(plan
        .phases
        .iter()
        .enumerate()
        .map(|(k, p)| Boundary { m: p.m, delta: p.delta, x_start: starts[k].clone(), x_end: starts[k + 1].clone() })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentRow {
    pub m: usize,
    pub delta: f64,
    pub x_m: Vec<f64>,
    pub x_star: Vec<f64>,
    pub distance: f64,
    /// `3δ_m`
    pub radius: f64,
    /// `(2/γ − 1)δ_m`, for `m ≥ 2`.
    pub tight_radius: Option<f64>,
    pub violated: bool,
    pub tight_violated: bool,
    /// `f_{δ_m}(x_{m+1}) − f_{δ_m}(x*_{δ_m})`.
    pub end_gap: f64,
    pub epsilon_m: f64,
    pub gap_violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub gamma: f64,
    pub factor: f64,
    pub rows: Vec<ContainmentRow>,
    pub violations: usize,
    pub tight_violations: usize,
    pub gap_violations: usize,
    /// Smallest `radius − distance`.
    pub min_margin: f64,
    /// Phases whose `x*_δ` could not be located.
    pub skipped: Vec<usize>,
}

impl ContainmentReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.tight_violations == 0
    }
}

/// Checks `‖x_m − x*_{δ_m}‖ < 3δ_m` at every phase start, the sharper
/// `(2/γ − 1)δ_m` from phase 2 on, and the end-of-phase gap against `ε_m`.
pub fn check_basin_containment(
    plan: &GraduatedPlan,
    boundaries: &[Boundary],
    family: &dyn SmoothedFamily,
) -> ContainmentReport {
    let gamma = plan.gamma();
    let factor = proof_bound_factor(gamma);
    let mut rows = Vec::with_capacity(boundaries.len());
    let mut skipped = Vec::new();
    for b in boundaries {
        let Some(x_star) = family.minimizer(b.delta) else {
            skipped.push(b.m);
            continue;
        };
        let obj = family.at(b.delta);
        let distance = dist(&b.x_start, &x_star);
        let radius = 3.0 * b.delta;
        let tight_radius = (b.m >= 2).then_some(factor * b.delta);
        let end_gap = obj.value(&b.x_end) - obj.value(&x_star);
        let epsilon_m = plan.phases.get(b.m - 1).map_or(f64::NAN, |p| p.epsilon_m);
        rows.push(ContainmentRow {
            m: b.m,
            delta: b.delta,
            violated: !(distance < radius),
            tight_violated: tight_radius.is_some_and(|r| !(distance <= r)),
            gap_violated: !(end_gap <= epsilon_m),
            x_m: b.x_start.clone(),
            x_star,
            distance,
            radius,
            tight_radius,
            end_gap,
            epsilon_m,
        });
    }
    ContainmentReport {
        gamma,
        factor,
        violations: rows.iter().filter(|r| r.violated).count(),
        tight_violations: rows.iter().filter(|r| r.tight_violated).count(),
        gap_violations: rows.iter().filter(|r| r.gap_violated).count(),
        min_margin: rows.iter().map(|r| r.radius - r.distance).fold(f64::INFINITY, f64::min),
        skipped,
        rows,
    }
}
