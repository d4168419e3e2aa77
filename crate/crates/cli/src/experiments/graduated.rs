use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use gradopt_core::graduated::{
    boundaries_from_trace, check_basin_containment, proof_bound_factor, run_explicit, run_implicit, ContainmentReport,
};
use gradopt_core::objectives::{BatchSampling, FiniteSum, Objective, SmoothedFamily};
use gradopt_core::optim::{degree_of_smoothing, Recording, RunTrace, TraceRow};
use gradopt_core::rng::child_seed;
use gradopt_core::{GraduatedPlan, PlanInputs, PlanMode, StepsRule};

use super::{at_least, build_finite_sum, cfg_err, check_point, coord_cols, main_seed, run_err, Check, Experiment, Report};
use crate::config::{GraduatedConfig, ModeName};
use crate::output::{header, num, OutputDir};
use crate::CliError;

const LADDER_TOL: f64 = 1e-9;

pub struct Graduated {
    plan: GraduatedPlan,
    base: Arc<dyn Objective>,
    family: Option<Arc<dyn SmoothedFamily>>,
    fs: Option<(FiniteSum, BatchSampling)>,
    starts: Vec<Vec<f64>>,
    n_seeds: usize,
    recording: Recording,
    seed: u64,
}

fn required<T: Copy>(v: Option<T>, field: &str, mode: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("plan.{field} is required in {mode} mode")))
}

impl Graduated {
    pub fn prepare(c: &GraduatedConfig) -> Result<Self, CliError> {
        let base = c.objective.build().map_err(|e| cfg_err("objective", e))?;
        let family = c.objective.analytic_family().ok();
        let p = &c.plan;
        let mut fs = None;
        let (mode, delta1) = match p.mode {
            ModeName::Explicit => {
                if family.is_none() {
                    return Err(CliError::Config(
                        "explicit mode needs an objective with a closed-form smoothed family".into(),
                    ));
                }
                let delta1 = required(p.delta1, "delta1", "explicit")?;
                (PlanMode::Explicit { delta1, eta: required(p.eta, "eta", "explicit")? }, delta1)
            }
            ModeName::Implicit => {
                let section = c
                    .finite_sum
                    .as_ref()
                    .ok_or_else(|| CliError::Config("implicit mode needs a [finite_sum] table".into()))?;
                let f = build_finite_sum(base.clone(), section, c.run.seed)?;
                let eta1 = required(p.eta1, "eta1", "implicit")?;
                let batch1 = p.batch1.unwrap_or(1);
                let preset = required(p.preset, "preset", "implicit")?;
                let delta1 = degree_of_smoothing(eta1, batch1 as f64, f.c()).map_err(|e| cfg_err("plan", e))?;
                let mode = PlanMode::Implicit { eta1, batch1, c: f.c(), preset };
                fs = Some((f, section.sampling));
                (mode, delta1)
            }
        };
        // Constants of f_{δ_1} when a smoothed family exists, else of f.
        let meta = match &family {
            Some(fam) if delta1 > 0.0 && delta1.is_finite() => fam.at(delta1).metadata().clone(),
            _ => base.metadata().clone(),
        };
        let sigma = p.sigma.or(meta.strong_convexity).ok_or_else(|| {
            CliError::Config("plan.sigma is required: the objective reports no strong convexity at delta1".into())
        })?;
        let lipschitz = p
            .lipschitz
            .or(meta.lipschitz)
            .ok_or_else(|| CliError::Config("plan.lipschitz is required: the objective reports no L_f".into()))?;
        let smoothness = p
            .smoothness
            .or(meta.smoothness)
            .ok_or_else(|| CliError::Config("plan.smoothness is required: the objective reports no L_g".into()))?;
        let plan = GraduatedPlan::build(PlanInputs {
            epsilon: p.epsilon,
            gamma: p.gamma,
            sigma,
            sigma_phases: p.sigma_phases.clone(),
            lipschitz,
            smoothness,
            mode,
            steps_rule: p.steps_rule,
            phase_override: p.phases,
        })
        .map_err(|e| cfg_err("plan", e))?;
        if let Some((f, _)) = &fs {
            let max_batch = plan.phases.iter().map(|ph| ph.batch).max().unwrap_or(1);
            if max_batch > f.len() {
                return Err(CliError::Config(format!(
                    "plan: largest batch {max_batch} exceeds finite_sum.n = {}",
                    f.len()
                )));
            }
        }
        let e = &c.execution;
        at_least("execution.starts", e.starts.len(), 1)?;
        for (i, s) in e.starts.iter().enumerate() {
            check_point(&format!("execution.starts[{i}]"), s, base.dim())?;
        }
        at_least("execution.n_seeds", e.n_seeds, 1)?;
        if let Recording::Every(0) = e.recording {
            return Err(CliError::Config("execution.recording: every must be >= 1".into()));
        }
        Ok(Graduated {
            plan,
            base,
            family,
            fs,
            starts: e.starts.clone(),
            n_seeds: e.n_seeds,
            recording: e.recording,
            seed: c.run.seed,
        })
    }
}

struct RunRecord {
    start: usize,
    seed: Option<u64>,
    traces: Vec<RunTrace>,
    x_final: Vec<f64>,
    start_in_ball: Option<bool>,
    containment: Option<ContainmentReport>,
}

impl Graduated {
    fn explicit_runs(&self, family: &dyn SmoothedFamily) -> Result<Vec<RunRecord>, CliError> {
        self.starts
            .par_iter()
            .enumerate()
            .map(|(i, x1)| {
                let run = run_explicit(&self.plan, family, x1, self.recording)
                    .map_err(|e| run_err(&format!("start {i}"), e))?;
                let containment = check_basin_containment(&self.plan, &run.boundaries, family);
                Ok(RunRecord {
                    start: i,
                    seed: None,
                    traces: run.traces,
                    x_final: run.x_final,
                    start_in_ball: run.start_in_ball,
                    containment: Some(containment),
                })
            })
            .collect()
    }

    fn implicit_runs(&self, fs: &FiniteSum, sampling: BatchSampling) -> Result<Vec<RunRecord>, CliError> {
        let root = main_seed(self.seed);
        let cells: Vec<(usize, usize)> =
            (0..self.starts.len()).flat_map(|i| (0..self.n_seeds).map(move |s| (i, s))).collect();
        cells
            .par_iter()
            .map(|&(i, s)| {
                let seed = child_seed(root, (i * self.n_seeds + s) as u64);
                let x1 = &self.starts[i];
                let tr = run_implicit(&self.plan, fs, x1, sampling, seed, self.recording)
                    .map_err(|e| run_err(&format!("start {i}, seed {seed}"), e))?;
                let (start_in_ball, containment) = match &self.family {
                    Some(fam) => {
                        let in_ball = fam.minimizer(self.plan.delta1).map(|s| dist(x1, &s) < 3.0 * self.plan.delta1);
                        let report = boundaries_from_trace(&self.plan, &tr)
                            .ok()
                            .map(|b| check_basin_containment(&self.plan, &b, fam.as_ref()));
                        (in_ball, report)
                    }
                    None => (None, None),
                };
                Ok(RunRecord {
                    start: i,
                    seed: Some(seed),
                    x_final: tr.final_x.clone(),
                    traces: vec![tr],
                    start_in_ball,
                    containment,
                })
            })
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn trace_row(run: usize, rec: &RunRecord, r: &TraceRow, x: &[f64]) -> Vec<String> {
    let mut row = vec![
        run.to_string(),
        rec.start.to_string(),
        rec.seed.map(|s| s.to_string()).unwrap_or_default(),
        r.t.to_string(),
        r.phase.to_string(),
        num(r.eta),
        r.batch.to_string(),
        num(r.delta),
        num(r.value),
        num(r.grad_norm),
    ];
    row.extend(x.iter().map(|v| num(*v)));
    row
}

impl Experiment for Graduated {
    fn execute(&self, out: &mut OutputDir) -> Result<Report, CliError> {
        let plan = &self.plan;
        let runs = match (&self.fs, &self.family) {
            (Some((fs, sampling)), _) => self.implicit_runs(fs, *sampling)?,
            (None, Some(fam)) => self.explicit_runs(fam.as_ref())?,
            (None, None) => unreachable!("prepare guarantees a family in explicit mode"),
        };
        let dim = self.base.dim();

        out.csv(
            "plan.csv",
            &header(&["phase", "delta", "eta", "batch", "batch_real", "sigma", "epsilon_m", "h_m", "steps", "kappa", "lambda"]),
            plan.phases.iter().map(|p| {
                vec![
                    p.m.to_string(),
                    num(p.delta),
                    num(p.eta),
                    p.batch.to_string(),
                    num(p.batch_real),
                    num(p.sigma),
                    num(p.epsilon_m),
                    num(p.h_m),
                    p.steps.to_string(),
                    num(p.kappa),
                    num(p.lambda),
                ]
            }),
        )?;

        // per-phase trace files, rows ordered by run then t
        let mut by_phase: BTreeMap<usize, Vec<Vec<String>>> = BTreeMap::new();
        let mut ladder_mismatch = 0usize;
        for (k, rec) in runs.iter().enumerate() {
            for tr in &rec.traces {
                for (i, r) in tr.rows.iter().enumerate() {
                    let want = plan.phases[r.phase - 1].delta;
                    if (r.delta - want).abs() > LADDER_TOL * want {
                        ladder_mismatch += 1;
                    }
                    by_phase.entry(r.phase).or_default().push(trace_row(k, rec, r, tr.iterate(i)));
                }
            }
        }
        let mut trace_cols = header(&["run", "start", "seed", "t", "phase", "eta", "batch", "delta", "value", "grad_norm"]);
        trace_cols.extend(coord_cols("x", dim));
        for (m, rows) in by_phase {
            out.csv(&format!("trace_phase{m}.csv"), &trace_cols, rows)?;
        }

        let mut run_cols = header(&["run", "start", "seed"]);
        run_cols.extend(coord_cols("x_start", dim));
        run_cols.extend(coord_cols("x_final", dim));
        run_cols.extend(header(&[
            "final_value",
            "start_in_ball",
            "containment_violations",
            "tight_violations",
            "gap_violations",
        ]));
        let opt = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
        out.csv(
            "runs.csv",
            &run_cols,
            runs.iter().enumerate().map(|(k, rec)| {
                let mut row = vec![k.to_string(), rec.start.to_string(), rec.seed.map(|s| s.to_string()).unwrap_or_default()];
                row.extend(self.starts[rec.start].iter().map(|v| num(*v)));
                row.extend(rec.x_final.iter().map(|v| num(*v)));
                row.push(num(self.base.value(&rec.x_final)));
                row.push(rec.start_in_ball.map(|b| b.to_string()).unwrap_or_default());
                row.push(opt(rec.containment.as_ref().map(|c| c.violations)));
                row.push(opt(rec.containment.as_ref().map(|c| c.tight_violations)));
                row.push(opt(rec.containment.as_ref().map(|c| c.gap_violations)));
                row
            }),
        )?;

        let mut checks = Vec::new();
        let mut notes = Vec::new();
        let ladder_err = plan
            .phases
            .iter()
            .map(|p| {
                let want = plan.delta1 * plan.gamma().powi(p.m as i32 - 1);
                (p.delta - want).abs() / want
            })
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "delta-ladder",
            ladder_err <= LADDER_TOL && ladder_mismatch == 0,
            format!("max relative error of delta_m against delta1*gamma^(m-1): {ladder_err:.2e}; {ladder_mismatch} trace rows off the ladder"),
        ));

        // Containment is a theorem about the deterministic explicit iteration
        // started inside the first ball; SGD runs only report it.
        let eligible: Vec<&RunRecord> = runs.iter().filter(|r| r.start_in_ball != Some(false)).collect();
        let outside = runs.len() - eligible.len();
        if outside > 0 {
            notes.push(format!("{outside} run(s) start outside B(x*_delta1, 3 delta1); containment is not expected there"));
        }
        let total = |f: fn(&ContainmentReport) -> usize| -> usize {
            eligible.iter().filter_map(|r| r.containment.as_ref()).map(f).sum()
        };
        let (loose, tight, gaps) = (total(|c| c.violations), total(|c| c.tight_violations), total(|c| c.gap_violations));
        let measured = eligible.iter().any(|r| r.containment.as_ref().is_some_and(|c| !c.rows.is_empty()));
        if measured && !plan.is_implicit() {
            checks.push(Check::new("containment", loose == 0, format!("{loose} boundaries with |x_m - x*| >= 3 delta_m")));
            checks.push(Check::new(
                "containment-tight",
                tight == 0,
                format!("{tight} boundaries with |x_m - x*| > (2/gamma - 1) delta_m"),
            ));
            if plan.inputs.steps_rule == StepsRule::Theory {
                checks.push(Check::new("phase-gap", gaps == 0, format!("{gaps} phases ending with f - f* > epsilon_m")));
            }
        } else if measured {
            notes.push(format!(
                "SGD containment (informational): {loose} loose, {tight} tight, {gaps} gap violations over {} runs",
                eligible.len()
            ));
        }

        let finals: Vec<f64> = runs.iter().map(|r| self.base.value(&r.x_final)).collect();
        let derived = json!({
            "mode": if plan.is_implicit() { "implicit" } else { "explicit" },
            "gamma": plan.gamma(),
            "delta1": plan.delta1,
            "alpha0": plan.alpha0,
            "M": plan.m,
            "M_theory": plan.m_theory,
            "sigma": plan.inputs.sigma,
            "lipschitz": plan.inputs.lipschitz,
            "smoothness": plan.inputs.smoothness,
            "proof_bound_factor": proof_bound_factor(plan.gamma()),
            "delta_ladder": plan.deltas(),
            "h_m": plan.phases.iter().map(|p| p.h_m).collect::<Vec<_>>(),
            "epsilon_m": plan.phases.iter().map(|p| p.epsilon_m).collect::<Vec<_>>(),
            "steps": plan.phases.iter().map(|p| p.steps).collect::<Vec<_>>(),
            "eta": plan.phases.iter().map(|p| p.eta).collect::<Vec<_>>(),
            "batch": plan.phases.iter().map(|p| p.batch).collect::<Vec<_>>(),
            "total_steps": plan.total_steps(),
            "gradient_evaluations": plan.gradient_evaluations(),
            "runs": runs.len(),
            "mean_final_value": finals.iter().sum::<f64>() / finals.len() as f64,
            "containment": { "violations": loose, "tight_violations": tight, "gap_violations": gaps, "runs_outside_first_ball": outside },
        });
        Ok(Report { derived, checks, notes })
    }
}
