//! Measured quantities: minibatch gradient variance, the `C²` estimate from
//! computation-optimal batch sizes, worst-case adaptive sharpness, and
//! convergence gaps against the per-phase bound.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{norm, BatchSampling, FiniteSum, Objective};
use crate::optim::{degree_of_smoothing, sgd_run, Recording, RunTrace, Schedule, DIVERGENCE_LIMIT};
use crate::rng;
use crate::stats;

/// Mean of `‖g_b(x) − ∇f(x)‖²` over `n_draws` with-replacement minibatches.
pub fn empirical_grad_variance(fs: &FiniteSum, x: &[f64], b: usize, n_draws: usize, seed: u64) -> Result<f64> {
    if n_draws < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n_draws });
    }
    fs.check_batch(b)?;
    if x.len() != fs.dim() {
        return Err(Error::param(format!("point has dimension {}, objective {}", x.len(), fs.dim())));
    }
    let full = fs.base().gradient(x);
    let mut rng = rng::from_seed(seed);
    let mut g = vec![0.0; fs.dim()];
    let mut total = 0.0;
    for _ in 0..n_draws {
        fs.minibatch_gradient_into(x, b, BatchSampling::WithReplacement, &mut rng, &mut g)?;
        total += g.iter().zip(&full).map(|(g, f)| (g - f) * (g - f)).sum::<f64>();
    }
    Ok(total / n_draws as f64)
}

/// Statistic averaged over the run prefix and compared with the threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdStat {
    /// Mean of `‖∇f(x_k)‖` compared with `ε`.
    #[default]
    MeanNorm,
    /// Mean of `‖∇f(x_k)‖²` compared with `ε²`.
    MeanSquaredNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchCost {
    pub batch: usize,
    /// SGD steps taken when the threshold was first met.
    pub steps: Option<u64>,
    /// `steps · batch`
    pub work: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// `b⋆ ε²/η`
    pub c2_hat: f64,
    pub b_star: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub costs: Vec<BatchCost>,
}

/// Runs SGD at each batch size in `batch_grid` until the running mean of the
/// full-gradient statistic over all iterates so far drops below the
/// threshold, picks the batch with the least work, and returns `b⋆ε²/η`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_c2(
    fs: &FiniteSum,
    eta: f64,
    epsilon: f64,
    batch_grid: &[usize],
    x0: &[f64],
    max_steps: u64,
    stat: ThresholdStat,
    seed: u64,
) -> Result<VarianceEstimate> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::param(format!("learning rate must be finite and > 0, got {eta}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!("threshold must be finite and > 0, got {epsilon}")));
    }
    if batch_grid.is_empty() {
        return Err(Error::param("batch grid is empty"));
    }
    if x0.len() != fs.dim() {
        return Err(Error::param(format!("start point has dimension {}, objective {}", x0.len(), fs.dim())));
    }
    for &b in batch_grid {
        fs.check_batch(b)?;
    }
    let costs: Vec<BatchCost> = batch_grid
        .par_iter()
        .enumerate()
        .map(|(k, &b)| {
            let steps = steps_to_threshold(fs, eta, epsilon, b, x0, max_steps, stat, rng::child_seed(seed, k as u64));
            BatchCost { batch: b, steps, work: steps.map(|s| s * b as u64) }
        })
        .collect();
    let best = costs
        .iter()
        .filter_map(|c| c.work.map(|w| (w, c.batch)))
        .min()
        .ok_or(Error::ThresholdUnreachable { max_steps })?;
    let b_star = best.1;
    Ok(VarianceEstimate { c2_hat: b_star as f64 * epsilon * epsilon / eta, b_star, epsilon, eta, costs })
}

#[allow(clippy::too_many_arguments)]
fn steps_to_threshold(
    fs: &FiniteSum,
    eta: f64,
    epsilon: f64,
    b: usize,
    x0: &[f64],
    max_steps: u64,
    stat: ThresholdStat,
    seed: u64,
) -> Option<u64> {
    let mut rng = rng::from_seed(seed);
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    let threshold = match stat {
        ThresholdStat::MeanNorm => epsilon,
        ThresholdStat::MeanSquaredNorm => epsilon * epsilon,
    };
    let mut sum = 0.0;
    for t in 0..=max_steps {
        fs.base().gradient_into(&x, &mut g);
        let n2: f64 = g.iter().map(|v| v * v).sum();
        sum += match stat {
            ThresholdStat::MeanNorm => n2.sqrt(),
            ThresholdStat::MeanSquaredNorm => n2,
        };
        if sum / (t + 1) as f64 <= threshold {
            return Some(t);
        }
        if t == max_steps {
            break;
        }
        fs.add_batch_noise(b, BatchSampling::WithReplacement, &mut rng, &mut g);
        x.iter_mut().zip(&g).for_each(|(x, g)| *x -= eta * g);
        if !x.iter().all(|v| v.is_finite()) || norm(&x) > DIVERGENCE_LIMIT {
            return None;
        }
    }
    None
}

/// Order `p` of the norm bounding the perturbation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PNorm {
    #[default]
    Inf,
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessQuery {
    pub w: Vec<f64>,
    pub rho: f64,
    /// Per-coordinate scale `c`; the ball is `‖δ ⊙ c⁻¹‖_p ≤ ρ`.
    pub c: Vec<f64>,
    pub p: PNorm,
}

impl SharpnessQuery {
    /// Unit scaling and `p = ∞`.
    pub fn new(w: Vec<f64>, rho: f64) -> Self {
        let c = vec![1.0; w.len()];
        SharpnessQuery { w, rho, c, p: PNorm::Inf }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::param(format!("rho must be finite and > 0, got {}", self.rho)));
        }
        if self.w.len() != dim || self.c.len() != dim {
            return Err(Error::param(format!(
                "w has {} and c has {} coordinates, objective {dim}",
                self.w.len(),
                self.c.len()
            )));
        }
        if let Some(c) = self.c.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::param(format!("scaling entries must be > 0, got {c}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SharpnessMethod {
    /// Dense scan of the interval, `d = 1`.
    Grid { points: usize },
    /// All `2^d` corners of the box, then coordinate-wise scans; `p = ∞`, `d ≤ 12`.
    CornerEnumeration,
    /// Projected ascent from random starts. The result is a lower bound.
    SignGradientAscent { restarts: usize, steps: usize, seed: u64 },
}

impl SharpnessMethod {
    /// Grid in 1-D, corners up to 12 dimensions, ascent beyond.
    pub fn auto(dim: usize, p: PNorm) -> Self {
        match (dim, p) {
            (1, _) => SharpnessMethod::Grid { points: 2001 },
            (d, PNorm::Inf) if d <= MAX_CORNER_DIM => SharpnessMethod::CornerEnumeration,
            _ => SharpnessMethod::SignGradientAscent { restarts: 16, steps: 200, seed: 0 },
        }
    }
}

pub const MAX_CORNER_DIM: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sharpness {
    /// `max f(w + δ) − f(w)` over the ball.
    pub value: f64,
    pub argmax: Vec<f64>,
    pub lower_bound: bool,
}

/// Golden-section maximization of `h` on `[a, b]`.
fn golden_max(h: &mut dyn FnMut(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (h(x1), h(x2));
    for _ in 0..80 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = h(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = h(x1);
        }
    }
    if f1 >= f2 { (x1, f1) } else { (x2, f2) }
}

/// Maximizes `h` on `[−r, r]`: scan, then refine around the best point.
fn scan_max(h: &mut dyn FnMut(f64) -> f64, r: f64, points: usize) -> (f64, f64) {
    let points = points.max(3);
    let step = 2.0 * r / (points - 1) as f64;
    let at = |i: usize| if i == points - 1 { r } else { -r + step * i as f64 };
    let mut best = (0.0, h(0.0));
    let mut best_i = None;
    for i in 0..points {
        let x = at(i);
        let v = h(x);
        if v > best.1 {
            best = (x, v);
            best_i = Some(i);
        }
    }
    if let Some(i) = best_i {
        let lo = at(i.saturating_sub(1));
        let hi = at((i + 1).min(points - 1));
        let (x, v) = golden_max(h, lo, hi);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Worst-case adaptive sharpness `max_{‖δ⊙c⁻¹‖_p ≤ ρ} f(w+δ) − f(w)`.
pub fn adaptive_sharpness(obj: &dyn Objective, query: &SharpnessQuery, method: SharpnessMethod) -> Result<Sharpness> {
    let d = obj.dim();
    query.validate(d)?;
    let w = &query.w;
    let f0 = obj.value(w);
    let rho = query.rho;
    let gain = |z: &[f64]| {
        let x: Vec<f64> = w.iter().zip(z).zip(&query.c).map(|((w, z), c)| w + c * z).collect();
        obj.value(&x) - f0
    };
    let to_delta = |z: &[f64]| z.iter().zip(&query.c).map(|(z, c)| z * c).collect::<Vec<f64>>();

    match method {
        SharpnessMethod::Grid { points } => {
            if d != 1 {
                return Err(Error::UnsupportedQuery(format!("grid scan needs d = 1, got d = {d}")));
            }
            // in one dimension every p-norm ball is the same interval
            let (z, v) = scan_max(&mut |z| gain(&[z]), rho, points);
            Ok(Sharpness { value: v.max(0.0), argmax: to_delta(&[z]), lower_bound: false })
        }
        SharpnessMethod::CornerEnumeration => {
            if query.p != PNorm::Inf {
                return Err(Error::UnsupportedQuery("corner enumeration needs p = inf".into()));
            }
            if d > MAX_CORNER_DIM {
                return Err(Error::UnsupportedQuery(format!("corner enumeration needs d <= {MAX_CORNER_DIM}, got {d}")));
            }
            let mut best_z = vec![0.0; d];
            let mut best = 0.0;
            let mut z = vec![0.0; d];
            for mask in 0u32..(1 << d) {
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi = if mask >> i & 1 == 1 { rho } else { -rho };
                }
                let v = gain(&z);
                if v > best {
                    best = v;
                    best_z.copy_from_slice(&z);
                }
            }
            for _ in 0..3 {
                for i in 0..d {
                    let mut probe = best_z.clone();
                    let (zi, v) = scan_max(
                        &mut |t| {
                            probe[i] = t;
                            gain(&probe)
                        },
                        rho,
                        201,
                    );
                    if v > best {
                        best = v;
                        best_z[i] = zi;
                    }
                }
            }
            Ok(Sharpness { value: best, argmax: to_delta(&best_z), lower_bound: false })
        }
        SharpnessMethod::SignGradientAscent { restarts, steps, seed } => {
            if restarts == 0 || steps == 0 {
                return Err(Error::param("sign-gradient ascent needs restarts and steps >= 1"));
            }
            let mut rng = rng::from_seed(seed);
            let mut best_z = vec![0.0; d];
            let mut best = 0.0;
            let mut g = vec![0.0; d];
            let mut x = vec![0.0; d];
            for _ in 0..restarts {
                let mut z: Vec<f64> = (0..d).map(|_| rng.random_range(-rho..=rho)).collect();
                project(&mut z, rho, query.p);
                for k in 0..steps {
                    let v = gain(&z);
                    if v > best {
                        best = v;
                        best_z.copy_from_slice(&z);
                    }
                    for i in 0..d {
                        x[i] = w[i] + query.c[i] * z[i];
                    }
                    obj.gradient_into(&x, &mut g);
                    // chain rule into the scaled coordinates
                    g.iter_mut().zip(&query.c).for_each(|(g, c)| *g *= c);
                    let alpha = rho * (1.0 - k as f64 / steps as f64) * 0.5;
                    match query.p {
                        PNorm::Inf => z.iter_mut().zip(&g).for_each(|(z, g)| *z += alpha * g.signum()),
                        PNorm::Two => {
                            let n = norm(&g);
                            if n > 0.0 {
                                z.iter_mut().zip(&g).for_each(|(z, g)| *z += alpha * g / n);
                            }
                        }
                    }
                    project(&mut z, rho, query.p);
                }
                let v = gain(&z);
                if v > best {
                    best = v;
                    best_z.copy_from_slice(&z);
                }
            }
            Ok(Sharpness { value: best, argmax: to_delta(&best_z), lower_bound: true })
        }
    }
}

fn project(z: &mut [f64], rho: f64, p: PNorm) {
    match p {
        PNorm::Inf => z.iter_mut().for_each(|v| *v = v.clamp(-rho, rho)),
        PNorm::Two => {
            let n = norm(z);
            if n > rho {
                z.iter_mut().for_each(|v| *v *= rho / n);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    /// Number of iterates considered, `x_0 … x_{T−1}`.
    pub t_count: u64,
    pub min_gap: f64,
    /// `H/T`
    pub bound: f64,
    pub violated: bool,
}

/// Running minimum of `f(x_t) − f*` paired with `H/T`. Rows with `t` not
/// recorded are skipped, which can only overstate the minimum.
pub fn convergence_gap(trace: &RunTrace, f_star: f64, h: f64) -> Vec<GapRow> {
    let mut out = Vec::with_capacity(trace.rows.len());
    let mut min_gap = f64::INFINITY;
    for row in &trace.rows {
        min_gap = min_gap.min(row.value - f_star);
        let t_count = row.t - trace.rows[0].t + 1;
        let bound = h / t_count as f64;
        out.push(GapRow { t_count, min_gap, bound, violated: !(min_gap <= bound) });
    }
    out
}

/// One run of a sharpness sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub eta: f64,
    pub batch: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub delta: f64,
    pub final_value: f64,
    pub sharpness: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SharpnessSweep {
    pub steps: u64,
    pub rho: f64,
    pub p: PNorm,
    pub sampling: BatchSampling,
}

/// Constant-`(η, b)` SGD from `x0` for every grid cell and seed; each run's
/// final iterate is scored by its raw value and adaptive sharpness (unit
/// scaling). Rows are ordered by cell (η-major), then seed index.
pub fn sharpness_sweep(
    fs: &FiniteSum,
    x0: &[f64],
    etas: &[f64],
    batches: &[usize],
    n_seeds: usize,
    cfg: &SharpnessSweep,
    seed: u64,
) -> Result<Vec<SweepRun>> {
    if etas.is_empty() || batches.is_empty() || n_seeds == 0 {
        return Err(Error::param("sweep grid and seed count must be non-empty"));
    }
    for &b in batches {
        fs.check_batch(b)?;
    }
    let cells: Vec<(f64, usize)> = etas.iter().flat_map(|&e| batches.iter().map(move |&b| (e, b))).collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..n_seeds).map(move |s| (c, s))).collect();
    let base = fs.base();
    jobs.par_iter()
        .map(|&(cell, s)| {
            let (eta, batch) = cells[cell];
            let run_seed = rng::child_seed(seed, (cell * n_seeds + s) as u64);
            let schedule = Schedule::constant(eta, batch, cfg.steps)?;
            let tr = sgd_run(fs, x0, &schedule, cfg.sampling, run_seed, Recording::Endpoints)?;
            let mut q = SharpnessQuery::new(tr.final_x.clone(), cfg.rho);
            q.p = cfg.p;
            let sharp = adaptive_sharpness(base.as_ref(), &q, SharpnessMethod::auto(fs.dim(), cfg.p))?;
            Ok(SweepRun {
                eta,
                batch,
                c: fs.c(),
                delta: degree_of_smoothing(eta, batch as f64, fs.c())?,
                final_value: base.value(&tr.final_x),
                sharpness: sharp.value,
                seed: run_seed,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub eta: f64,
    pub batch: usize,
    pub delta: f64,
    pub mean_sharpness: f64,
    pub mean_final_value: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAnalysis {
    /// Cells sorted by `δ`.
    pub cells: Vec<CellSummary>,
    /// Rank correlation of `δ` with mean sharpness across cells.
    pub spearman: f64,
    /// Mean final value over the low, middle and high `δ` thirds of the cells.
    pub bins: [f64; 3],
    /// The middle third beats both outer thirds.
    pub mid_best: bool,
}

/// Averages runs per `(η, b)` cell and summarizes the sharpness and value
/// trends in `δ`.
pub fn analyze_sweep(runs: &[SweepRun]) -> Result<SweepAnalysis> {
    let mut cells: Vec<CellSummary> = Vec::new();
    for r in runs {
        match cells.iter_mut().find(|c| c.eta == r.eta && c.batch == r.batch) {
            Some(c) => {
                c.mean_sharpness += r.sharpness;
                c.mean_final_value += r.final_value;
                c.runs += 1;
            }
            None => cells.push(CellSummary {
                eta: r.eta,
                batch: r.batch,
                delta: r.delta,
                mean_sharpness: r.sharpness,
                mean_final_value: r.final_value,
                runs: 1,
            }),
        }
    }
    if cells.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: cells.len() });
    }
    for c in &mut cells {
        c.mean_sharpness /= c.runs as f64;
        c.mean_final_value /= c.runs as f64;
    }
    cells.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let deltas: Vec<f64> = cells.iter().map(|c| c.delta).collect();
    let sharp: Vec<f64> = cells.iter().map(|c| c.mean_sharpness).collect();
    let k = cells.len() / 3;
    let mean_of = |s: &[CellSummary]| s.iter().map(|c| c.mean_final_value).sum::<f64>() / s.len() as f64;
    let bins = [mean_of(&cells[..k]), mean_of(&cells[k..2 * k]), mean_of(&cells[2 * k..])];
    Ok(SweepAnalysis {
        spearman: stats::spearman(&deltas, &sharp),
        mid_best: bins[1] < bins[0] && bins[1] < bins[2],
        bins,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_finite_sum, FiniteSum, Linear, Quadratic};
    use crate::optim::gd_run;
    use std::sync::Arc;

    fn two_point() -> FiniteSum {
        FiniteSum::from_perturbations(Arc::new(Linear::constant(1, 0.0)), vec![vec![1.0], vec![-1.0]]).unwrap()
    }

    #[test]
    fn variance_examples() {
        let fs = make_finite_sum(Arc::new(Quadratic::square()), 16, 0.0, 1).unwrap();
        assert_eq!(empirical_grad_variance(&fs, &[0.3], 4, 100, 0).unwrap(), 0.0);
        // either outcome deviates by exactly 1
        assert_eq!(empirical_grad_variance(&two_point(), &[0.0], 1, 1000, 0).unwrap(), 1.0);
        let fs = make_finite_sum(Arc::new(Linear::constant(1, 0.0)), 1024, 1.0, 2).unwrap();
        let v = empirical_grad_variance(&fs, &[0.0], 4, 100_000, 3).unwrap();
        assert!((v - 0.25).abs() < 0.0125, "{v}");
        assert!(matches!(empirical_grad_variance(&fs, &[0.0], 4, 1, 3), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn c2_without_noise_prefers_smallest_batch() {
        let fs = make_finite_sum(Arc::new(Quadratic::square()), 64, 0.0, 1).unwrap();
        let est = estimate_c2(&fs, 0.1, 0.5, &[1, 2, 4, 8], &[1.0], 10_000, ThresholdStat::MeanNorm, 0).unwrap();
        assert_eq!(est.b_star, 1);
        assert_eq!(est.c2_hat, 0.25 / 0.1);
        let costs: Vec<Option<u64>> = est.costs.iter().map(|c| c.steps).collect();
        assert!(costs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn c2_unreachable() {
        let fs = make_finite_sum(Arc::new(Quadratic::square()), 64, 1.0, 1).unwrap();
        let r = estimate_c2(&fs, 0.1, 1e-4, &[1, 2], &[1.0], 50, ThresholdStat::MeanSquaredNorm, 0);
        assert!(matches!(r, Err(Error::ThresholdUnreachable { max_steps: 50 })));
    }

    #[test]
    fn sharpness_examples() {
        let q = Quadratic::new(vec![1.0], vec![0.0], (-1.0, 1.0)).unwrap();
        let s = adaptive_sharpness(&q, &SharpnessQuery::new(vec![0.0], 0.1), SharpnessMethod::Grid { points: 2001 }).unwrap();
        assert!((s.value - 0.005).abs() < 1e-12, "{}", s.value);
        let lin = Linear::new(vec![3.0], 0.0).unwrap();
        let s = adaptive_sharpness(&lin, &SharpnessQuery::new(vec![0.0], 0.1), SharpnessMethod::Grid { points: 11 }).unwrap();
        assert!((s.value - 0.3).abs() < 1e-12);
        let flat = Linear::constant(3, 2.0);
        for m in [
            SharpnessMethod::CornerEnumeration,
            SharpnessMethod::SignGradientAscent { restarts: 3, steps: 10, seed: 1 },
        ] {
            let s = adaptive_sharpness(&flat, &SharpnessQuery::new(vec![0.0; 3], 0.1), m).unwrap();
            assert_eq!(s.value, 0.0);
        }
    }

    #[test]
    fn sharpness_in_several_dimensions() {
        let q = Quadratic::new(vec![1.0, 4.0], vec![0.0, 0.0], (-1.0, 1.0)).unwrap();
        let mut query = SharpnessQuery::new(vec![0.0, 0.0], 0.1);
        query.c = vec![1.0, 0.5];
        let exact = 0.5 * 0.01 + 0.5 * 4.0 * 0.0025;
        let s = adaptive_sharpness(&q, &query, SharpnessMethod::CornerEnumeration).unwrap();
        assert!((s.value - exact).abs() < 1e-15);
        let s = adaptive_sharpness(&q, &query, SharpnessMethod::SignGradientAscent { restarts: 4, steps: 50, seed: 2 }).unwrap();
        assert!(s.lower_bound && (s.value - exact).abs() < 1e-12);
        query.p = PNorm::Two;
        assert!(matches!(
            adaptive_sharpness(&q, &query, SharpnessMethod::CornerEnumeration),
            Err(Error::UnsupportedQuery(_))
        ));
        // the scaled l2 ball is maximized along the sharper axis
        let s = adaptive_sharpness(&q, &query, SharpnessMethod::SignGradientAscent { restarts: 8, steps: 200, seed: 2 }).unwrap();
        assert!((s.value - 0.5 * 0.01).abs() < 1e-6, "{}", s.value);
        assert!(matches!(
            adaptive_sharpness(&q, &query, SharpnessMethod::Grid { points: 10 }),
            Err(Error::UnsupportedQuery(_))
        ));
        query.rho = 0.0;
        assert!(adaptive_sharpness(&q, &query, SharpnessMethod::CornerEnumeration).is_err());
    }

    #[test]
    fn gap_on_quadratic() {
        let q = Quadratic::square();
        let tr = gd_run(&q, &[0.0], 0.25, 10, Recording::Full).unwrap();
        assert!(convergence_gap(&tr, 0.0, 1.0).iter().all(|r| r.min_gap == 0.0));
        let tr = gd_run(&q, &[1.0], 0.25, 30, Recording::Full).unwrap();
        let rows = convergence_gap(&tr, 0.0, 9.0);
        for (k, r) in rows.iter().enumerate() {
            assert_eq!(r.t_count, k as u64 + 1);
            assert!((r.min_gap - 0.25f64.powi(k as i32)).abs() < 1e-15);
            assert!(!r.violated);
        }
    }

    #[test]
    fn sweep_shapes() {
        let fs = make_finite_sum(Arc::new(Quadratic::square()), 32, 1.0, 5).unwrap();
        let cfg = SharpnessSweep { steps: 50, rho: 0.1, p: PNorm::Inf, sampling: BatchSampling::WithReplacement };
        let runs = sharpness_sweep(&fs, &[0.5], &[0.1, 0.2], &[1, 2, 4], 3, &cfg, 7).unwrap();
        assert_eq!(runs.len(), 18);
        assert_eq!((runs[3].eta, runs[3].batch), (0.1, 2));
        let again = sharpness_sweep(&fs, &[0.5], &[0.1, 0.2], &[1, 2, 4], 3, &cfg, 7).unwrap();
        assert_eq!(runs, again);
        let a = analyze_sweep(&runs).unwrap();
        assert_eq!(a.cells.len(), 6);
        assert!(a.cells.windows(2).all(|w| w[0].delta <= w[1].delta));
    }
}
