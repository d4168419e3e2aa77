use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{degree_of_smoothing, sgd_run, Recording, Schedule};
use crate::error::{Error, Result};
use crate::objectives::{BatchSampling, FiniteSum, Objective};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub t: u64,
    pub sgd_mean: Vec<f64>,
    /// Standard error of the mean, `std/√n_runs`, per coordinate.
    pub sgd_se: Vec<f64>,
    pub reference: Vec<f64>,
    pub raw_gd: Vec<f64>,
    /// `max_i |sgd_mean_i − reference_i|`.
    pub deviation: f64,
    pub raw_deviation: f64,
    /// `deviation ≤ 4·se` in every coordinate.
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub delta: f64,
    pub eta: f64,
    pub batch: usize,
    pub c: f64,
    pub n_runs: usize,
    pub steps: u64,
    pub rows: Vec<EquivalenceRow>,
    pub max_deviation: f64,
    pub max_raw_deviation: f64,
    pub max_se: f64,
    pub steps_within: usize,
}

impl EquivalenceReport {
    pub fn all_within(&self) -> bool {
        self.steps_within == self.rows.len()
    }
}

/// Compares the mean over `n_runs` seeds of constant-(η, b) SGD on `fs`
/// against gradient descent on `smoothed`, the surrogate `f_δ` at
/// `δ = ηC/√b`.
///
/// Writing `y_t = x_t − η∇f(x_t)`, one SGD step is `x_{t+1} = y_t − ηω_t`, so
/// `E[x_{t+1}] = y_t` and `y_t` follows GD on `f_δ`. The reference path is
/// therefore `r_0 = x_0`, `r_1 = x_0 − η∇f(x_0)` and `r_{t+1} = r_t − η∇f_δ(r_t)`.
/// For quadratics this is plain GD from `x_0`.
#[allow(clippy::too_many_arguments)]
pub fn sgd_gd_equivalence(
    fs: &FiniteSum,
    smoothed: &dyn Objective,
    x0: &[f64],
    eta: f64,
    batch: usize,
    n_runs: usize,
    steps: u64,
    seed: u64,
) -> Result<EquivalenceReport> {
    if n_runs < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n_runs });
    }
    if smoothed.dim() != fs.dim() || x0.len() != fs.dim() {
        return Err(Error::param("dimension mismatch between finite sum, surrogate and start point"));
    }
    let delta = degree_of_smoothing(eta, batch as f64, fs.c())?;
    let schedule = Schedule::constant(eta, batch, steps)?;
    let d = fs.dim();
    let base = fs.base();

    let runs: Vec<Vec<f64>> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let tr = sgd_run(fs, x0, &schedule, BatchSampling::WithReplacement, rng::child_seed(seed, r as u64), Recording::Full)?;
            Ok(tr.iterates().flatten().copied().collect())
        })
        .collect::<Result<_>>()?;

    let mut reference = Vec::with_capacity(steps as usize + 1);
    let mut raw = Vec::with_capacity(steps as usize + 1);
    let mut r = x0.to_vec();
    let mut q = x0.to_vec();
    let mut g = vec![0.0; d];
    for t in 0..=steps {
        reference.push(r.clone());
        raw.push(q.clone());
        if t == 0 {
            base.gradient_into(&r, &mut g);
        } else {
            smoothed.gradient_into(&r, &mut g);
        }
        r.iter_mut().zip(&g).for_each(|(v, gi)| *v -= eta * gi);
        base.gradient_into(&q, &mut g);
        q.iter_mut().zip(&g).for_each(|(v, gi)| *v -= eta * gi);
    }

    let n = n_runs as f64;
    let mut rows = Vec::with_capacity(steps as usize + 1);
    for t in 0..=steps as usize {
        let mut mean = vec![0.0; d];
        let mut se = vec![0.0; d];
        for i in 0..d {
            let xs = runs.iter().map(|run| run[t * d + i]);
            let m = xs.clone().sum::<f64>() / n;
            let var = xs.map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
            mean[i] = m;
            se[i] = (var / n).sqrt();
        }
        let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let within = (0..d).all(|i| {
            let gap = (mean[i] - reference[t][i]).abs();
            // rounding allowance covers the zero-noise case, where se = 0
            gap <= 4.0 * se[i] + 1e-12 * (1.0 + reference[t][i].abs())
        });
        rows.push(EquivalenceRow {
            t: t as u64,
            deviation: dev(&mean, &reference[t]),
            raw_deviation: dev(&mean, &raw[t]),
            sgd_mean: mean,
            sgd_se: se,
            reference: reference[t].clone(),
            raw_gd: raw[t].clone(),
            within,
        });
    }
    Ok(EquivalenceReport {
        delta,
        eta,
        batch,
        c: fs.c(),
        n_runs,
        steps,
        max_deviation: rows.iter().map(|r| r.deviation).fold(0.0, f64::max),
        max_raw_deviation: rows.iter().map(|r| r.raw_deviation).fold(0.0, f64::max),
        max_se: rows.iter().flat_map(|r| r.sgd_se.iter().copied()).fold(0.0, f64::max),
        steps_within: rows.iter().filter(|r| r.within).count(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_finite_sum, Quadratic};
    use std::sync::Arc;

    #[test]
    fn zero_spread_has_zero_deviation() {
        let q: Arc<dyn Objective> = Arc::new(Quadratic::square());
        let fs = make_finite_sum(q.clone(), 8, 0.0, 0).unwrap();
        let rep = sgd_gd_equivalence(&fs, q.as_ref(), &[0.8], 0.1, 1, 10, 20, 0).unwrap();
        assert_eq!(rep.delta, 0.0);
        assert!(rep.max_deviation < 1e-15);
        assert!(rep.all_within());
    }

    #[test]
    fn quadratic_mean_path_matches_gd() {
        let q: Arc<dyn Objective> = Arc::new(Quadratic::square());
        let fs = make_finite_sum(q.clone(), 256, 1.0, 4).unwrap();
        let rep = sgd_gd_equivalence(&fs, q.as_ref(), &[0.8], 0.05, 1, 400, 40, 1).unwrap();
        assert!(rep.rows.iter().filter(|r| r.within).count() >= 38, "{}", rep.steps_within);
        assert_eq!(rep.rows.len(), 41);
        assert!((rep.delta - 0.05).abs() < 1e-15);
    }
}
