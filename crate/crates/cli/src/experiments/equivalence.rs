use std::sync::Arc;

use serde_json::json;

use gradopt_core::objectives::{FiniteSum, Objective};
use gradopt_core::optim::{degree_of_smoothing, sgd_gd_equivalence};

use super::{at_least, build_finite_sum, cfg_err, check_point, coord_cols, main_seed, positive, run_err, Check, Experiment, Report};
use crate::config::{EquivalenceConfig, EquivalenceSection};
use crate::output::{num, OutputDir};
use crate::CliError;

pub struct Equivalence {
    fs: FiniteSum,
    smoothed: Arc<dyn Objective>,
    delta: f64,
    s: EquivalenceSection,
    seed: u64,
}

impl Equivalence {
    pub fn prepare(c: &EquivalenceConfig) -> Result<Self, CliError> {
        let obj = c.objective.build().map_err(|e| cfg_err("objective", e))?;
        let family = c
            .objective
            .analytic_family()
            .map_err(|e| cfg_err("objective (the reference path needs a closed-form smoothed surrogate)", e))?;
        let s = c.equivalence.clone();
        let fs = build_finite_sum(obj.clone(), &c.finite_sum, c.run.seed)?;
        check_point("equivalence.x0", &s.x0, obj.dim())?;
        positive("equivalence.eta", s.eta)?;
        fs.check_batch(s.batch).map_err(|e| cfg_err("equivalence.batch", e))?;
        at_least("equivalence.n_runs", s.n_runs, 2)?;
        let delta = degree_of_smoothing(s.eta, s.batch as f64, fs.c()).map_err(|e| cfg_err("equivalence", e))?;
        let smoothed = family.at(delta);
        Ok(Equivalence { fs, smoothed, delta, s, seed: c.run.seed })
    }
}

impl Experiment for Equivalence {
    fn execute(&self, out: &mut OutputDir) -> Result<Report, CliError> {
        let s = &self.s;
        let rep = sgd_gd_equivalence(&self.fs, self.smoothed.as_ref(), &s.x0, s.eta, s.batch, s.n_runs, s.steps, main_seed(self.seed))
            .map_err(|e| run_err("equivalence", e))?;
        let d = self.fs.dim();
        let mut cols = vec!["t".to_string()];
        for p in ["sgd_mean", "sgd_se", "reference", "raw_gd"] {
            cols.extend(coord_cols(p, d));
        }
        cols.extend(["deviation", "raw_deviation", "within"].map(String::from));
        out.csv(
            "equivalence.csv",
            &cols,
            rep.rows.iter().map(|r| {
                let mut row = vec![r.t.to_string()];
                for v in [&r.sgd_mean, &r.sgd_se, &r.reference, &r.raw_gd] {
                    row.extend(v.iter().map(|x| num(*x)));
                }
                row.extend([num(r.deviation), num(r.raw_deviation), r.within.to_string()]);
                row
            }),
        )?;
        let mut checks = Vec::new();
        if s.require_within {
            checks.push(Check::new(
                "mean-within-4se",
                rep.all_within(),
                format!("{}/{} steps within 4 standard errors", rep.steps_within, rep.rows.len()),
            ));
        }
        Ok(Report {
            derived: json!({
                "delta": self.delta,
                "C": rep.c,
                "max_deviation": rep.max_deviation,
                "max_raw_deviation": rep.max_raw_deviation,
                "max_se": rep.max_se,
                "steps_within": rep.steps_within,
            }),
            checks,
            notes: vec![],
        })
    }
}
