use rand::Rng as _;
use rayon::prelude::*;
use serde_json::json;

use gradopt_core::objectives::{BatchSampling, FiniteSum};
use gradopt_core::optim::{sgd_run, Phase, Recording, Schedule};
use gradopt_core::rng::{self, child_seed};
use gradopt_core::Preset;

use super::{at_least, build_finite_sum, cfg_err, check_point, coord_cols, main_seed, positive, run_err, Check, Experiment, Report};
use crate::config::{CompareConfig, CompareSection, MethodName};
use crate::output::{header, num, OutputDir};
use crate::CliError;

const BOOTSTRAP_STREAM: u64 = 2_000_000;
const CI_LEVEL: f64 = 0.95;

pub struct Compare {
    fs: FiniteSum,
    sampling: BatchSampling,
    s: CompareSection,
    schedules: Vec<(MethodName, Schedule)>,
    seed: u64,
}

fn factors(method: MethodName, gamma: f64) -> Result<(f64, f64), CliError> {
    let preset = match method {
        MethodName::Constant => return Ok((1.0, 1.0)),
        MethodName::LrDecay => Preset::LrDecay,
        MethodName::BatchGrowth => Preset::BatchGrowth,
        MethodName::Mixed => Preset::Mixed,
    };
    preset.factors(gamma).map_err(|e| cfg_err(&format!("compare.methods ({})", method.name()), e))
}

impl Compare {
    pub fn prepare(c: &CompareConfig) -> Result<Self, CliError> {
        let obj = c.objective.build().map_err(|e| cfg_err("objective", e))?;
        let fs = build_finite_sum(obj, &c.finite_sum, c.run.seed)?;
        let s = c.compare.clone();
        at_least("compare.methods", s.methods.len(), 1)?;
        for (i, m) in s.methods.iter().enumerate() {
            if s.methods[..i].contains(m) {
                return Err(CliError::Config(format!("compare.methods lists {} twice", m.name())));
            }
        }
        check_point("compare.x0", &s.x0, fs.dim())?;
        positive("compare.eta1", s.eta1)?;
        at_least("compare.batch1", s.batch1, 1)?;
        at_least("compare.phases", s.phases, 1)?;
        at_least("compare.n_seeds", s.n_seeds, 1)?;
        if !(0.0 < s.gamma && s.gamma < 1.0) {
            return Err(CliError::Config(format!("compare.gamma must lie in (0, 1), got {}", s.gamma)));
        }
        if let Some(r) = s.basin_radius {
            positive("compare.basin_radius", r)?;
        }
        let per_phase = match (s.samples_per_phase, s.steps_per_phase) {
            (Some(n), None) if n > 0 => PerPhase::Samples(n),
            (None, Some(t)) if t > 0 => PerPhase::Steps(t),
            _ => {
                return Err(CliError::Config(
                    "compare needs exactly one of samples_per_phase or steps_per_phase, and it must be >= 1".into(),
                ))
            }
        };
        let mut schedules = Vec::with_capacity(s.methods.len());
        for &method in &s.methods {
            let (kappa, lambda) = factors(method, s.gamma)?;
            let mut phases = Vec::with_capacity(s.phases);
            for m in 0..s.phases {
                let eta = s.eta1 * kappa.powi(m as i32);
                let batch = (s.batch1 as f64 * lambda.powi(m as i32)).round() as usize;
                fs.check_batch(batch).map_err(|e| cfg_err(&format!("{} phase {}", method.name(), m + 1), e))?;
                let steps = match per_phase {
                    PerPhase::Steps(t) => t,
                    PerPhase::Samples(n) if n % batch as u64 == 0 => n / batch as u64,
                    PerPhase::Samples(n) => {
                        return Err(CliError::Config(format!(
                            "{} phase {}: batch size {batch} does not divide samples_per_phase = {n}",
                            method.name(),
                            m + 1
                        )))
                    }
                };
                phases.push(Phase { eta, batch, steps });
            }
            let schedule = Schedule::new(phases).map_err(|e| cfg_err(method.name(), e))?;
            schedules.push((method, schedule));
        }
        let budgets: Vec<u64> = schedules.iter().map(|(_, sch)| sch.gradient_evaluations()).collect();
        if budgets.iter().any(|&b| b != budgets[0]) {
            let detail: Vec<String> =
                schedules.iter().zip(&budgets).map(|((m, _), b)| format!("{}={b}", m.name())).collect();
            return Err(CliError::Config(format!("methods use different gradient budgets: {}", detail.join(", "))));
        }
        Ok(Compare { fs, sampling: c.finite_sum.sampling, s, schedules, seed: c.run.seed })
    }
}

#[derive(Clone, Copy)]
enum PerPhase {
    Samples(u64),
    Steps(u64),
}

#[derive(Clone, Copy, Debug)]
struct PairStat {
    mean_diff: f64,
    lo: f64,
    hi: f64,
}

/// Paired percentile bootstrap of `mean(a - b)` over seeds.
fn paired_bootstrap(a: &[f64], b: &[f64], reps: usize, seed: u64) -> PairStat {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let mean_diff = diffs.iter().sum::<f64>() / n as f64;
    if reps == 0 || n < 2 {
        return PairStat { mean_diff, lo: f64::NAN, hi: f64::NAN };
    }
    let mut rng = rng::from_seed(seed);
    let mut means: Vec<f64> = (0..reps)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (reps - 1) as f64).round() as usize).min(reps - 1)];
    let tail = (1.0 - CI_LEVEL) / 2.0;
    PairStat { mean_diff, lo: q(tail), hi: q(1.0 - tail) }
}

impl Experiment for Compare {
    fn execute(&self, out: &mut OutputDir) -> Result<Report, CliError> {
        let s = &self.s;
        let root = main_seed(self.seed);
        let seeds: Vec<u64> = (0..s.n_seeds).map(|k| child_seed(root, k as u64)).collect();
        let cells: Vec<(usize, usize)> =
            (0..self.schedules.len()).flat_map(|m| (0..s.n_seeds).map(move |k| (m, k))).collect();
        let finals = cells
            .par_iter()
            .map(|&(m, k)| {
                sgd_run(&self.fs, &s.x0, &self.schedules[m].1, self.sampling, seeds[k], Recording::Endpoints)
                    .map(|tr| tr.final_x)
                    .map_err(|e| run_err(&format!("{} seed {}", self.schedules[m].0.name(), seeds[k]), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let base = self.fs.base();
        let in_basin = |x: &[f64]| s.basin_radius.map(|r| x.iter().map(|v| v * v).sum::<f64>().sqrt() < r);

        let mut run_cols = header(&["method", "seed"]);
        run_cols.extend(coord_cols("x_final", self.fs.dim()));
        run_cols.extend(header(&["final_value", "in_basin"]));
        out.csv(
            "runs.csv",
            &run_cols,
            cells.iter().zip(&finals).map(|(&(m, k), x)| {
                let mut row = vec![self.schedules[m].0.name().to_string(), seeds[k].to_string()];
                row.extend(x.iter().map(|v| num(*v)));
                row.push(num(base.value(x)));
                row.push(in_basin(x).map(|b| b.to_string()).unwrap_or_default());
                row
            }),
        )?;

        let values: Vec<Vec<f64>> = (0..self.schedules.len())
            .map(|m| (0..s.n_seeds).map(|k| base.value(&finals[m * s.n_seeds + k])).collect())
            .collect();
        let mut ranking: Vec<(usize, f64)> =
            values.iter().enumerate().map(|(m, v)| (m, v.iter().sum::<f64>() / v.len() as f64)).collect();
        ranking.sort_by(|a, b| a.1.total_cmp(&b.1));
        out.csv(
            "ranking.csv",
            &header(&["rank", "method", "mean", "min", "max", "basin_fraction"]),
            ranking.iter().enumerate().map(|(r, &(m, mean))| {
                let v = &values[m];
                let basin = s.basin_radius.map(|_| {
                    let hits = (0..s.n_seeds).filter(|&k| in_basin(&finals[m * s.n_seeds + k]) == Some(true)).count();
                    hits as f64 / s.n_seeds as f64
                });
                vec![
                    (r + 1).to_string(),
                    self.schedules[m].0.name().to_string(),
                    num(mean),
                    num(v.iter().copied().fold(f64::INFINITY, f64::min)),
                    num(v.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                    basin.map(num).unwrap_or_default(),
                ]
            }),
        )?;

        let mut pairs = Vec::new();
        let mut order = Vec::new();
        let mut notes = Vec::new();
        if self.schedules.len() < 2 {
            notes.push("single method: no ranking or pairwise comparison".into());
        }
        for i in 0..self.schedules.len() {
            for j in i + 1..self.schedules.len() {
                let seed = child_seed(self.seed, BOOTSTRAP_STREAM + (i * self.schedules.len() + j) as u64);
                let st = paired_bootstrap(&values[i], &values[j], s.bootstrap, seed);
                let (a, b) = (self.schedules[i].0.name(), self.schedules[j].0.name());
                let verdict = if st.hi < 0.0 {
                    order.push(format!("{a} < {b}"));
                    format!("{a} < {b}")
                } else if st.lo > 0.0 {
                    order.push(format!("{b} < {a}"));
                    format!("{b} < {a}")
                } else {
                    "not significant".to_string()
                };
                pairs.push(vec![a.to_string(), b.to_string(), num(st.mean_diff), num(st.lo), num(st.hi), verdict]);
            }
        }
        out.csv("pairs.csv", &header(&["a", "b", "mean_diff", "ci_lo", "ci_hi", "verdict"]), pairs)?;

        let mean_of = |name: MethodName| {
            self.schedules.iter().position(|(m, _)| *m == name).map(|m| values[m].iter().sum::<f64>() / s.n_seeds as f64)
        };
        // recorded, not asserted
        let direction = match (mean_of(MethodName::BatchGrowth), mean_of(MethodName::LrDecay)) {
            (Some(bg), Some(lr)) => Some(bg <= lr),
            _ => None,
        };
        let checks: Vec<Check> = Vec::new();
        Ok(Report {
            derived: json!({
                "gradient_evaluations": self.schedules[0].1.gradient_evaluations(),
                "schedules": self.schedules.iter().map(|(m, sch)| json!({
                    "method": m.name(),
                    "eta": sch.phases().iter().map(|p| p.eta).collect::<Vec<_>>(),
                    "batch": sch.phases().iter().map(|p| p.batch).collect::<Vec<_>>(),
                    "steps": sch.phases().iter().map(|p| p.steps).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
                "ranking": ranking.iter().map(|&(m, _)| self.schedules[m].0.name()).collect::<Vec<_>>(),
                "partial_order": order,
                "batch_growth_mean_le_lr_decay": direction,
            }),
            checks,
            notes,
        })
    }
}
