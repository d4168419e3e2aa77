use std::sync::Arc;

use serde_json::json;

use gradopt_core::noise::{normalize, Family, NoiseDistribution, Normalized};
use gradopt_core::objectives::Objective;
use gradopt_core::rng::child_seed;
use gradopt_core::smoothing::{linspace, smoothing_sweep};

use super::{at_least, cfg_err, main_seed, run_err, Check, Experiment, Report};
use crate::config::{CiChecks, SmoothSweepConfig};
use crate::output::{header, num, OutputDir};
use crate::CliError;

// Calibration panels get their own seeds, one per distribution.
const CALIBRATION_STREAM: u64 = 1_000;

pub struct SmoothSweep {
    obj: Arc<dyn Objective>,
    delta: f64,
    grid: Vec<Vec<f64>>,
    dists: Vec<NoiseDistribution>,
    normalized: Vec<Option<Normalized>>,
    n_samples: usize,
    seed: u64,
    checks: Option<CiChecks>,
}

impl SmoothSweep {
    pub fn prepare(c: &SmoothSweepConfig) -> Result<Self, CliError> {
        let obj = c.objective.build().map_err(|e| cfg_err("objective", e))?;
        if obj.dim() != 1 {
            return Err(CliError::Config(format!("smooth-sweep grids are 1-D; objective has dimension {}", obj.dim())));
        }
        let s = &c.sweep;
        if !(s.delta >= 0.0 && s.delta.is_finite()) {
            return Err(CliError::Config(format!("sweep.delta must be finite and >= 0, got {}", s.delta)));
        }
        if !(s.grid.lo.is_finite() && s.grid.hi.is_finite() && s.grid.lo <= s.grid.hi) {
            return Err(CliError::Config("sweep.grid needs finite lo <= hi".into()));
        }
        at_least("sweep.grid.points", s.grid.points, 1)?;
        at_least("sweep.n_samples", s.n_samples, 2)?;
        let families = s.distributions.clone().unwrap_or_else(|| Family::reference_set().to_vec());
        if families.is_empty() {
            return Err(CliError::Config("sweep.distributions is empty".into()));
        }
        let seed = c.run.seed;
        let mut dists = Vec::with_capacity(families.len());
        let mut normalized = Vec::with_capacity(families.len());
        for (k, fam) in families.iter().enumerate() {
            let d = NoiseDistribution::new(*fam, 1).map_err(|e| cfg_err("sweep.distributions", e))?;
            match s.normalization.kind() {
                Some(kind) => {
                    if s.n_cal < 2 {
                        return Err(CliError::Config("sweep.n_cal must be at least 2".into()));
                    }
                    let n = normalize(&d, kind, s.n_cal, child_seed(seed, CALIBRATION_STREAM + k as u64))
                        .map_err(|e| cfg_err("sweep.normalization", e))?;
                    dists.push(n.dist);
                    normalized.push(Some(n));
                }
                None => {
                    dists.push(d);
                    normalized.push(None);
                }
            }
        }
        let grid = linspace(s.grid.lo, s.grid.hi, s.grid.points).into_iter().map(|x| vec![x]).collect();
        Ok(SmoothSweep { obj, delta: s.delta, grid, dists, normalized, n_samples: s.n_samples, seed, checks: c.checks })
    }
}

impl Experiment for SmoothSweep {
    fn execute(&self, out: &mut OutputDir) -> Result<Report, CliError> {
        let rows = smoothing_sweep(self.obj.as_ref(), self.delta, &self.dists, &self.grid, self.n_samples, main_seed(self.seed))
            .map_err(|e| run_err("smoothing sweep", e))?;
        out.csv(
            "sweep.csv",
            &header(&["objective", "distribution", "delta", "x", "estimate", "ci", "n_samples", "unstable"]),
            rows.iter().map(|r| {
                vec![
                    r.objective.clone(),
                    r.distribution.clone(),
                    num(r.delta),
                    num(r.x[0]),
                    num(r.estimate),
                    num(r.ci),
                    r.n_samples.to_string(),
                    r.unstable.to_string(),
                ]
            }),
        )?;

        let mut per_dist = Vec::new();
        let mut checks = Vec::new();
        for (k, dist) in self.dists.iter().enumerate() {
            let mine: Vec<_> = rows.iter().filter(|r| r.distribution == dist.name()).collect();
            let lo = mine.iter().map(|r| r.estimate).fold(f64::INFINITY, f64::min);
            let hi = mine.iter().map(|r| r.estimate).fold(f64::NEG_INFINITY, f64::max);
            let unstable = mine.iter().filter(|r| r.unstable).count();
            let mut cis: Vec<f64> = mine.iter().map(|r| r.ci).collect();
            cis.sort_by(f64::total_cmp);
            let median_ci = cis[cis.len() / 2];
            per_dist.push(json!({
                "distribution": dist.name(),
                "light_tailed": dist.is_light_tailed(),
                "scale_factor": self.normalized[k].map(|n| n.factor),
                "scale_source": self.normalized[k].map(|n| n.source),
                "min_estimate": lo,
                "max_estimate": hi,
                "median_ci": median_ci,
                "unstable_points": unstable,
            }));
            if let Some(t) = self.checks {
                let (hits, rule) = if dist.is_light_tailed() {
                    (mine.iter().filter(|r| r.ci <= t.light_ci_max).count(), format!("ci <= {}", t.light_ci_max))
                } else {
                    (mine.iter().filter(|r| r.ci >= t.heavy_ci_min).count(), format!("ci >= {}", t.heavy_ci_min))
                };
                checks.push(Check::new(
                    &format!("ci-{}", dist.name()),
                    2 * hits > mine.len(),
                    format!("{rule} at {hits}/{} grid points", mine.len()),
                ));
            }
        }
        Ok(Report {
            derived: json!({ "rows": rows.len(), "delta": self.delta, "distributions": per_dist }),
            checks,
            notes: vec![],
        })
    }
}
