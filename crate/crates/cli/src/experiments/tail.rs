use rayon::prelude::*;
use serde_json::json;

use gradopt_core::noise::{classify_tail, empirical_tail_test, sample, Family, NoiseDistribution, TailEvidence, TailLabel, TailTestConfig};
use gradopt_core::rng::child_seed;

use super::{at_least, cfg_err, main_seed, run_err, Check, Experiment, Report};
use crate::config::TailConfig;
use crate::output::{header, num, OutputDir};
use crate::CliError;

pub struct Tail {
    dists: Vec<NoiseDistribution>,
    n_samples: usize,
    n_seeds: usize,
    thresholds: TailTestConfig,
    seed: u64,
}

impl Tail {
    pub fn prepare(c: &TailConfig) -> Result<Self, CliError> {
        let t = &c.tail;
        let families = t.families.clone().unwrap_or_else(|| Family::reference_set().to_vec());
        at_least("tail.families", families.len(), 1)?;
        at_least("tail.n_seeds", t.n_seeds, 1)?;
        let thresholds = t.thresholds.unwrap_or_default();
        at_least("tail.n_samples", t.n_samples, thresholds.min_samples.max(2))?;
        if !(thresholds.tail_fraction > 0.0 && thresholds.tail_fraction < 1.0) {
            return Err(CliError::Config("tail.thresholds.tail_fraction must lie in (0, 1)".into()));
        }
        let dists = families
            .iter()
            .map(|f| NoiseDistribution::new(*f, 1))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| cfg_err("tail.families", e))?;
        Ok(Tail { dists, n_samples: t.n_samples, n_seeds: t.n_seeds, thresholds, seed: c.run.seed })
    }
}

fn label(l: TailLabel) -> &'static str {
    match l {
        TailLabel::Light => "light",
        TailLabel::Heavy => "heavy",
    }
}

impl Experiment for Tail {
    fn execute(&self, out: &mut OutputDir) -> Result<Report, CliError> {
        let root = main_seed(self.seed);
        let cells: Vec<(usize, usize)> =
            (0..self.dists.len()).flat_map(|k| (0..self.n_seeds).map(move |s| (k, s))).collect();
        let rows = cells
            .par_iter()
            .map(|&(k, s)| {
                let seed = child_seed(root, (k * self.n_seeds + s) as u64);
                let draws = sample(&self.dists[k], self.n_samples, seed)?;
                let emp = empirical_tail_test(draws.as_slice(), &self.thresholds)?;
                Ok((k, seed, emp))
            })
            .collect::<Result<Vec<_>, gradopt_core::Error>>()
            .map_err(|e| run_err("tail test", e))?;
        let mut wrong = Vec::new();
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|(k, seed, emp)| {
                let dist = &self.dists[*k];
                let analytic = classify_tail(&dist.family).label;
                let (kurt, index) = match emp.evidence {
                    TailEvidence::Empirical { excess_kurtosis, tail_index } => (excess_kurtosis, tail_index),
                    _ => (f64::NAN, f64::NAN),
                };
                let agree = emp.label == analytic;
                if !agree {
                    wrong.push(format!("{}@{seed}", dist.name()));
                }
                vec![
                    dist.name().to_string(),
                    seed.to_string(),
                    num(kurt),
                    num(index),
                    label(emp.label).to_string(),
                    label(analytic).to_string(),
                    agree.to_string(),
                ]
            })
            .collect();
        out.csv(
            "tail.csv",
            &header(&["family", "seed", "excess_kurtosis", "tail_index", "empirical", "analytic", "agree"]),
            table,
        )?;
        let checks = vec![Check::new(
            "tail-classification",
            wrong.is_empty(),
            format!("{}/{} samples agree with the analytic label; disagreeing: {wrong:?}", rows.len() - wrong.len(), rows.len()),
        )];
        Ok(Report { derived: json!({ "samples": rows.len(), "thresholds": self.thresholds }), checks, notes: vec![] })
    }
}
