use serde_json::json;

use gradopt_core::metrics::{analyze_sweep, sharpness_sweep, SharpnessSweep};
use gradopt_core::objectives::FiniteSum;

use super::{at_least, build_finite_sum, cfg_err, check_point, main_seed, positive, run_err, Check, Experiment, Report};
use crate::config::{SharpnessConfig, SharpnessSection, SweepChecks};
use crate::output::{header, num, OutputDir};
use crate::CliError;

pub struct Sharpness {
    fs: FiniteSum,
    s: SharpnessSection,
    cfg: SharpnessSweep,
    checks: Option<SweepChecks>,
    seed: u64,
}

impl Sharpness {
    pub fn prepare(c: &SharpnessConfig) -> Result<Self, CliError> {
        let obj = c.objective.build().map_err(|e| cfg_err("objective", e))?;
        let fs = build_finite_sum(obj, &c.finite_sum, c.run.seed)?;
        let s = c.sweep.clone();
        check_point("sweep.x0", &s.x0, fs.dim())?;
        at_least("sweep.etas", s.etas.len(), 1)?;
        at_least("sweep.batches", s.batches.len(), 1)?;
        at_least("sweep.n_seeds", s.n_seeds, 1)?;
        if s.etas.len() * s.batches.len() < 3 {
            return Err(CliError::Config("sweep needs at least 3 (eta, batch) cells for the delta bins".into()));
        }
        for &eta in &s.etas {
            positive("sweep.etas", eta)?;
        }
        for &b in &s.batches {
            fs.check_batch(b).map_err(|e| cfg_err("sweep.batches", e))?;
        }
        positive("sweep.rho", s.rho)?;
        let cfg = SharpnessSweep { steps: s.steps, rho: s.rho, p: s.p, sampling: c.finite_sum.sampling };
        Ok(Sharpness { fs, s, cfg, checks: c.checks, seed: c.run.seed })
    }
}

impl Experiment for Sharpness {
    fn execute(&self, out: &mut OutputDir) -> Result<Report, CliError> {
        let s = &self.s;
        let runs = sharpness_sweep(&self.fs, &s.x0, &s.etas, &s.batches, s.n_seeds, &self.cfg, main_seed(self.seed))
            .map_err(|e| run_err("sharpness sweep", e))?;
        out.csv(
            "sweep.csv",
            &header(&["eta", "batch", "C", "delta", "final_value", "sharpness", "seed"]),
            runs.iter().map(|r| {
                vec![
                    num(r.eta),
                    r.batch.to_string(),
                    num(r.c),
                    num(r.delta),
                    num(r.final_value),
                    num(r.sharpness),
                    r.seed.to_string(),
                ]
            }),
        )?;
        let a = analyze_sweep(&runs).map_err(|e| run_err("sweep analysis", e))?;
        out.csv(
            "cells.csv",
            &header(&["eta", "batch", "delta", "mean_sharpness", "mean_final_value", "runs"]),
            a.cells.iter().map(|c| {
                vec![
                    num(c.eta),
                    c.batch.to_string(),
                    num(c.delta),
                    num(c.mean_sharpness),
                    num(c.mean_final_value),
                    c.runs.to_string(),
                ]
            }),
        )?;
        let mut checks = Vec::new();
        if let Some(k) = self.checks {
            if let Some(max) = k.max_spearman {
                checks.push(Check::new(
                    "sharpness-decreases-with-delta",
                    a.spearman <= max,
                    format!("Spearman(delta, sharpness) = {:.4}, required <= {max}", a.spearman),
                ));
            }
            if k.require_mid_best {
                checks.push(Check::new(
                    "mid-delta-best",
                    a.mid_best,
                    format!("mean final value by delta third: {:?}", a.bins),
                ));
            }
        }
        Ok(Report {
            derived: json!({
                "C": self.fs.c(),
                "cells": a.cells.len(),
                "runs": runs.len(),
                "spearman": a.spearman,
                "bins": a.bins,
                "mid_best": a.mid_best,
            }),
            checks,
            notes: vec![],
        })
    }
}
