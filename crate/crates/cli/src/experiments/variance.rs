use rayon::prelude::*;
use serde_json::json;

use gradopt_core::metrics::{empirical_grad_variance, estimate_c2};
use gradopt_core::objectives::FiniteSum;
use gradopt_core::rng::child_seed;
use gradopt_core::stats::loglog_slope;

use super::{at_least, build_finite_sum, cfg_err, check_point, main_seed, positive, run_err, Check, Experiment, Report};
use crate::config::{C2Section, VarianceConfig, VarianceSection};
use crate::output::{header, num, OutputDir};
use crate::CliError;

const C2_STREAM: u64 = 1_000_000;

pub struct Variance {
    fs: FiniteSum,
    v: VarianceSection,
    c2: Option<C2Section>,
    seed: u64,
}

impl Variance {
    pub fn prepare(c: &VarianceConfig) -> Result<Self, CliError> {
        let obj = c.objective.build().map_err(|e| cfg_err("objective", e))?;
        let fs = build_finite_sum(obj, &c.finite_sum, c.run.seed)?;
        let v = c.variance.clone();
        check_point("variance.x", &v.x, fs.dim())?;
        at_least("variance.batches", v.batches.len(), 1)?;
        for &b in &v.batches {
            fs.check_batch(b).map_err(|e| cfg_err("variance.batches", e))?;
        }
        at_least("variance.n_draws", v.n_draws, 2)?;
        if let Some(t) = v.tolerance {
            positive("variance.tolerance", t)?;
        }
        if let Some(s) = &c.c2 {
            positive("c2.eta", s.eta)?;
            positive("c2.epsilon", s.epsilon)?;
            at_least("c2.batch_grid", s.batch_grid.len(), 1)?;
            for &b in &s.batch_grid {
                fs.check_batch(b).map_err(|e| cfg_err("c2.batch_grid", e))?;
            }
            check_point("c2.x0", &s.x0, fs.dim())?;
            at_least("c2.max_steps", s.max_steps as usize, 1)?;
        }
        Ok(Variance { fs, v, c2: c.c2.clone(), seed: c.run.seed })
    }
}

impl Experiment for Variance {
    fn execute(&self, out: &mut OutputDir) -> Result<Report, CliError> {
        let root = main_seed(self.seed);
        let c2 = self.fs.c2();
        let vars = self
            .v
            .batches
            .par_iter()
            .enumerate()
            .map(|(k, &b)| empirical_grad_variance(&self.fs, &self.v.x, b, self.v.n_draws, child_seed(root, k as u64)))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| run_err("gradient variance", e))?;
        let rel: Vec<f64> = self.v.batches.iter().zip(&vars).map(|(&b, &v)| (v * b as f64 / c2 - 1.0).abs()).collect();
        out.csv(
            "variance.csv",
            &header(&["batch", "variance", "c2_over_b", "relative_error"]),
            self.v.batches.iter().zip(&vars).zip(&rel).map(|((&b, &v), &r)| {
                vec![b.to_string(), num(v), num(c2 / b as f64), num(r)]
            }),
        )?;
        let bs: Vec<f64> = self.v.batches.iter().map(|&b| b as f64).collect();
        let slope = (bs.len() >= 2 && c2 > 0.0).then(|| loglog_slope(&bs, &vars));
        let max_rel = rel.iter().copied().fold(0.0, f64::max);

        let mut checks = Vec::new();
        if let Some(tol) = self.v.tolerance {
            checks.push(Check::new(
                "variance-law",
                max_rel <= tol,
                format!("max |b var / C^2 - 1| = {max_rel:.4} (tolerance {tol})"),
            ));
        }

        let mut c2_summary = serde_json::Value::Null;
        if let Some(s) = &self.c2 {
            let est = estimate_c2(
                &self.fs,
                s.eta,
                s.epsilon,
                &s.batch_grid,
                &s.x0,
                s.max_steps,
                s.stat,
                child_seed(self.seed, C2_STREAM),
            )
            .map_err(|e| run_err("C^2 estimate", e))?;
            out.csv(
                "c2.csv",
                &header(&["batch", "steps", "work"]),
                est.costs.iter().map(|c| {
                    vec![
                        c.batch.to_string(),
                        c.steps.map(|v| v.to_string()).unwrap_or_default(),
                        c.work.map(|v| v.to_string()).unwrap_or_default(),
                    ]
                }),
            )?;
            c2_summary = json!({ "c2_hat": est.c2_hat, "b_star": est.b_star, "stat": s.stat });
        }
        Ok(Report {
            derived: json!({
                "C2": c2,
                "variances": vars,
                "max_relative_error": max_rel,
                "loglog_slope": slope,
                "estimate": c2_summary,
            }),
            checks,
            notes: vec![],
        })
    }
}
