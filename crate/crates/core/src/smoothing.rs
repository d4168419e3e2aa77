//! Monte Carlo estimates of `f_δ(x) = E[f(x − δu)]` and its gradient.
//!
//! Every estimate is computed over a noise panel: a fixed matrix of draws.
//! Functions taking a seed draw the panel from it, so two calls with the same
//! seed use common random numbers. The `*_on_panel` variants accept the panel
//! directly.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{sample, NoiseDistribution, SampleMatrix};
use crate::objectives::Objective;
use crate::rng;

/// z-value of the 95% normal-approximation interval.
pub const Z95: f64 = 1.96;

/// Share of non-finite samples above which an estimate is flagged unstable.
pub const UNSTABLE_FRACTION: f64 = 0.01;

const CHUNK: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedEstimate {
    pub value: f64,
    pub ci_half_width: f64,
    pub sample_std: f64,
    pub n_samples: usize,
    /// Samples whose objective value was NaN or infinite (excluded).
    pub n_nonfinite: usize,
    pub unstable: bool,
    pub delta: f64,
    pub dist: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedGradient {
    pub value: Vec<f64>,
    pub ci_half_width: Vec<f64>,
    pub n_samples: usize,
    pub n_nonfinite: usize,
    pub unstable: bool,
    pub delta: f64,
    pub dist: String,
}

/// Running sums shifted by a reference value to limit cancellation.
#[derive(Clone, Copy, Default)]
struct Moments {
    n: usize,
    bad: usize,
    s1: f64,
    s2: f64,
}

impl Moments {
    fn push(&mut self, v: f64, shift: f64) {
        if v.is_finite() {
            let d = v - shift;
            self.n += 1;
            self.s1 += d;
            self.s2 += d * d;
        } else {
            self.bad += 1;
        }
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.bad += o.bad;
        self.s1 += o.s1;
        self.s2 += o.s2;
        self
    }

    /// (mean, unbiased std)
    fn finish(&self, shift: f64) -> (f64, f64) {
        if self.n == 0 {
            return (f64::NAN, f64::NAN);
        }
        let n = self.n as f64;
        let m = self.s1 / n;
        let var = if self.n > 1 { ((self.s2 - n * m * m) / (n - 1.0)).max(0.0) } else { 0.0 };
        (shift + m, var.sqrt())
    }
}

fn check_inputs(obj: &dyn Objective, x: &[f64], delta: f64, panel: &SampleMatrix) -> Result<()> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::param(format!("delta must be finite and >= 0, got {delta}")));
    }
    if x.len() != obj.dim() || panel.dim() != obj.dim() {
        return Err(Error::param(format!(
            "dimension mismatch: objective {}, point {}, panel {}",
            obj.dim(),
            x.len(),
            panel.dim()
        )));
    }
    if panel.rows() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: panel.rows() });
    }
    Ok(())
}

fn draw_panel(dist: &NoiseDistribution, dim: usize, n_samples: usize, seed: u64) -> Result<SampleMatrix> {
    if dist.dim != dim {
        return Err(Error::param(format!("noise dimension {} does not match objective dimension {dim}", dist.dim)));
    }
    if n_samples < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n_samples });
    }
    sample(dist, n_samples, seed)
}

/// Objective values `f(x − δu_k)` reduced chunk-wise in panel order.
fn value_moments(obj: &dyn Objective, x: &[f64], delta: f64, panel: &SampleMatrix, shift: f64) -> Moments {
    let d = panel.dim();
    let partials: Vec<Moments> = panel
        .as_slice()
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut y = vec![0.0; d];
            let mut m = Moments::default();
            for u in chunk.chunks_exact(d) {
                for ((yi, xi), ui) in y.iter_mut().zip(x).zip(u) {
                    *yi = xi - delta * ui;
                }
                m.push(obj.value(&y), shift);
            }
            m
        })
        .collect();
    partials.into_iter().fold(Moments::default(), Moments::merge)
}

fn estimate(m: &Moments, shift: f64, n: usize, delta: f64, dist: &str) -> SmoothedEstimate {
    let (value, std) = m.finish(shift);
    let ci = if m.n > 0 { Z95 * std / (m.n as f64).sqrt() } else { f64::NAN };
    SmoothedEstimate {
        value,
        ci_half_width: ci,
        sample_std: std,
        n_samples: n,
        n_nonfinite: m.bad,
        unstable: m.bad as f64 > UNSTABLE_FRACTION * n as f64,
        delta,
        dist: dist.to_string(),
    }
}

pub fn mc_smooth_eval_on_panel(
    obj: &dyn Objective,
    x: &[f64],
    delta: f64,
    panel: &SampleMatrix,
    dist_name: &str,
) -> Result<SmoothedEstimate> {
    check_inputs(obj, x, delta, panel)?;
    let n = panel.rows();
    let fx = obj.value(x);
    if delta == 0.0 {
        let finite = fx.is_finite();
        return Ok(SmoothedEstimate {
            value: fx,
            ci_half_width: 0.0,
            sample_std: 0.0,
            n_samples: n,
            n_nonfinite: if finite { 0 } else { n },
            unstable: !finite,
            delta,
            dist: dist_name.to_string(),
        });
    }
    let shift = if fx.is_finite() { fx } else { 0.0 };
    let m = value_moments(obj, x, delta, panel, shift);
    Ok(estimate(&m, shift, n, delta, dist_name))
}

/// Sample mean of `f(x − δu_k)` over `n_samples` draws of `dist`.
pub fn mc_smooth_eval(
    obj: &dyn Objective,
    x: &[f64],
    delta: f64,
    dist: &NoiseDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<SmoothedEstimate> {
    let panel = draw_panel(dist, obj.dim(), n_samples, seed)?;
    mc_smooth_eval_on_panel(obj, x, delta, &panel, dist.name())
}

pub fn mc_smooth_grad_on_panel(
    obj: &dyn Objective,
    x: &[f64],
    delta: f64,
    panel: &SampleMatrix,
    dist_name: &str,
) -> Result<SmoothedGradient> {
    check_inputs(obj, x, delta, panel)?;
    let n = panel.rows();
    let d = obj.dim();
    let gx = obj.gradient(x);
    if delta == 0.0 {
        let finite = gx.iter().all(|g| g.is_finite());
        return Ok(SmoothedGradient {
            value: gx,
            ci_half_width: vec![0.0; d],
            n_samples: n,
            n_nonfinite: if finite { 0 } else { n },
            unstable: !finite,
            delta,
            dist: dist_name.to_string(),
        });
    }
    let shift: Vec<f64> = gx.iter().map(|g| if g.is_finite() { *g } else { 0.0 }).collect();
    let partials: Vec<(Vec<Moments>, usize)> = panel
        .as_slice()
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut y = vec![0.0; d];
            let mut g = vec![0.0; d];
            let mut ms = vec![Moments::default(); d];
            let mut bad = 0;
            for u in chunk.chunks_exact(d) {
                for ((yi, xi), ui) in y.iter_mut().zip(x).zip(u) {
                    *yi = xi - delta * ui;
                }
                obj.gradient_into(&y, &mut g);
                // a sample counts as bad if any coordinate is non-finite
                if g.iter().all(|v| v.is_finite()) {
                    for ((m, gi), s) in ms.iter_mut().zip(&g).zip(&shift) {
                        m.push(*gi, *s);
                    }
                } else {
                    bad += 1;
                }
            }
            (ms, bad)
        })
        .collect();
    let mut total = vec![Moments::default(); d];
    let mut bad = 0;
    for (ms, b) in partials {
        bad += b;
        for (t, m) in total.iter_mut().zip(ms) {
            *t = t.merge(m);
        }
    }
    let mut value = Vec::with_capacity(d);
    let mut ci = Vec::with_capacity(d);
    for (m, s) in total.iter().zip(&shift) {
        let (mean, std) = m.finish(*s);
        value.push(mean);
        ci.push(if m.n > 0 { Z95 * std / (m.n as f64).sqrt() } else { f64::NAN });
    }
    Ok(SmoothedGradient {
        value,
        ci_half_width: ci,
        n_samples: n,
        n_nonfinite: bad,
        unstable: bad as f64 > UNSTABLE_FRACTION * n as f64,
        delta,
        dist: dist_name.to_string(),
    })
}

/// Sample mean of `∇f(x − δu_k)`, an unbiased estimate of `∇f_δ(x)`.
pub fn mc_smooth_grad(
    obj: &dyn Objective,
    x: &[f64],
    delta: f64,
    dist: &NoiseDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<SmoothedGradient> {
    let panel = draw_panel(dist, obj.dim(), n_samples, seed)?;
    mc_smooth_grad_on_panel(obj, x, delta, &panel, dist.name())
}

/// Mean and 95% half-width of `f(x − δu) − f(y − δu)` over one panel.
fn paired_difference(obj: &dyn Objective, x: &[f64], y: &[f64], delta: f64, panel: &SampleMatrix) -> (f64, f64) {
    let d = panel.dim();
    let mut px = vec![0.0; d];
    let mut py = vec![0.0; d];
    let mut m = Moments::default();
    for u in panel.iter_rows() {
        for i in 0..d {
            px[i] = x[i] - delta * u[i];
            py[i] = y[i] - delta * u[i];
        }
        m.push(obj.value(&px) - obj.value(&py), 0.0);
    }
    let (mean, std) = m.finish(0.0);
    (mean, Z95 * std / (m.n.max(1) as f64).sqrt())
}

/// Per-coordinate mean and half-width of `∇f(x − δu) − ∇f(y − δu)`.
fn paired_gradient_difference(
    obj: &dyn Objective,
    x: &[f64],
    y: &[f64],
    delta: f64,
    panel: &SampleMatrix,
) -> (Vec<f64>, Vec<f64>) {
    let d = panel.dim();
    let (mut px, mut py) = (vec![0.0; d], vec![0.0; d]);
    let (mut gx, mut gy) = (vec![0.0; d], vec![0.0; d]);
    let mut ms = vec![Moments::default(); d];
    for u in panel.iter_rows() {
        for i in 0..d {
            px[i] = x[i] - delta * u[i];
            py[i] = y[i] - delta * u[i];
        }
        obj.gradient_into(&px, &mut gx);
        obj.gradient_into(&py, &mut gy);
        for i in 0..d {
            ms[i].push(gx[i] - gy[i], 0.0);
        }
    }
    ms.iter()
        .map(|m| {
            let (mean, std) = m.finish(0.0);
            (mean, Z95 * std / (m.n.max(1) as f64).sqrt())
        })
        .unzip()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundPoint {
    pub x: Vec<f64>,
    pub f: f64,
    pub estimate: f64,
    pub ci: f64,
    /// `|f_δ(x) − f(x)| / (δ L_f)`, zero when `δ = 0`.
    pub ratio: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub delta: f64,
    pub lipschitz: f64,
    pub points: Vec<ErrorBoundPoint>,
    pub max_ratio: f64,
    pub violations: usize,
}

impl ErrorBoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `|f_δ(x) − f(x)| ≤ δ L_f + 4·CI` at every grid point.
pub fn check_error_bound(
    obj: &dyn Objective,
    delta: f64,
    dist: &NoiseDistribution,
    grid: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<ErrorBoundReport> {
    let lf = obj
        .metadata()
        .lipschitz
        .ok_or_else(|| Error::param(format!("{} declares no Lipschitz constant", obj.name())))?;
    let panel = draw_panel(dist, obj.dim(), n_samples, seed)?;
    let points = grid
        .par_iter()
        .map(|x| {
            let est = mc_smooth_eval_on_panel(obj, x, delta, &panel, dist.name())?;
            let f = obj.value(x);
            let gap = (est.value - f).abs();
            let ratio = if delta == 0.0 { 0.0 } else { gap / (delta * lf) };
            Ok(ErrorBoundPoint {
                x: x.clone(),
                f,
                estimate: est.value,
                ci: est.ci_half_width,
                ratio,
                violated: !(gap <= delta * lf + 4.0 * est.ci_half_width),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_ratio = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
    let violations = points.iter().filter(|p| p.violated).count();
    Ok(ErrorBoundReport { delta, lipschitz: lf, points, max_ratio, violations })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub delta: f64,
    pub lipschitz: f64,
    pub smoothness: f64,
    pub pairs: usize,
    pub value_violations: usize,
    pub gradient_violations: usize,
    /// Largest `|f_δ(x) − f_δ(y)| / (L_f ‖x − y‖)` seen.
    pub max_value_ratio: f64,
    /// Largest `‖∇f_δ(x) − ∇f_δ(y)‖ / (L_g ‖x − y‖)` seen.
    pub max_gradient_ratio: f64,
}

impl LipschitzReport {
    pub fn passed(&self) -> bool {
        self.value_violations == 0 && self.gradient_violations == 0
    }
}

/// Checks that `f_δ` keeps the Lipschitz constants of `f` on random pairs
/// drawn uniformly from `region`, using one panel for both points of a pair.
pub fn check_lipschitz_inheritance(
    obj: &dyn Objective,
    delta: f64,
    dist: &NoiseDistribution,
    region: &[(f64, f64)],
    pair_count: usize,
    n_samples: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    let meta = obj.metadata();
    let (lf, lg) = match (meta.lipschitz, meta.smoothness) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::param(format!("{} needs both L_f and L_g metadata", obj.name()))),
    };
    let d = obj.dim();
    if region.len() != d {
        return Err(Error::param(format!("region has {} intervals, objective has dimension {d}", region.len())));
    }
    let panel = draw_panel(dist, d, n_samples, rng::child_seed(seed, 0))?;
    let mut prng = rng::stream(seed, 1);
    let mut draw = || region.iter().map(|&(lo, hi)| prng.random_range(lo..=hi)).collect::<Vec<f64>>();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..pair_count).map(|_| (draw(), draw())).collect();
    let rows: Vec<(bool, bool, f64, f64)> = pairs
        .par_iter()
        .map(|(x, y)| {
            let dist_xy = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let (dv, ci_v) = paired_difference(obj, x, y, delta, &panel);
            let (dg, ci_g) = paired_gradient_difference(obj, x, y, delta, &panel);
            let dg_norm = dg.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ci_g_norm = ci_g.iter().map(|v| v * v).sum::<f64>().sqrt();
            // rounding allowance for pairs where the bound is tight and the CI is zero
            let tol = |b: f64| b + 1e-12 * (1.0 + b);
            let v_bad = !(dv.abs() <= tol(lf * dist_xy + 8.0 * ci_v));
            let g_bad = !(dg_norm <= tol(lg * dist_xy + 8.0 * ci_g_norm));
            let ratio = |num: f64, l: f64| if dist_xy > 0.0 && l > 0.0 { num / (l * dist_xy) } else { 0.0 };
            (v_bad, g_bad, ratio(dv.abs(), lf), ratio(dg_norm, lg))
        })
        .collect();
    Ok(LipschitzReport {
        delta,
        lipschitz: lf,
        smoothness: lg,
        pairs: pair_count,
        value_violations: rows.iter().filter(|r| r.0).count(),
        gradient_violations: rows.iter().filter(|r| r.1).count(),
        max_value_ratio: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        max_gradient_ratio: rows.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}

/// One row of a smoothing sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub objective: String,
    pub distribution: String,
    pub delta: f64,
    pub x: Vec<f64>,
    pub estimate: f64,
    pub ci: f64,
    pub n_samples: usize,
    pub unstable: bool,
}

/// Estimates `f_δ` at every grid point under every distribution. Each
/// distribution gets its own panel (seeded by its position in `dists`)
/// shared by all grid points. Rows are ordered distribution-major.
pub fn smoothing_sweep(
    obj: &dyn Objective,
    delta: f64,
    dists: &[NoiseDistribution],
    grid: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::param("sweep grid is empty"));
    }
    let panels = dists
        .iter()
        .enumerate()
        .map(|(k, dist)| draw_panel(dist, obj.dim(), n_samples, rng::child_seed(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..dists.len()).flat_map(|k| (0..grid.len()).map(move |i| (k, i))).collect();
    let name = obj.name();
    cells
        .par_iter()
        .map(|&(k, i)| {
            let est = mc_smooth_eval_on_panel(obj, &grid[i], delta, &panels[k], dists[k].name())?;
            Ok(SweepRow {
                objective: name.clone(),
                distribution: dists[k].name().to_string(),
                delta,
                x: grid[i].clone(),
                estimate: est.value,
                ci: est.ci_half_width,
                n_samples: est.n_samples,
                unstable: est.unstable,
            })
        })
        .collect()
}

/// `points` evenly spaced 1-D grid points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let span = (points - 1) as f64;
            (0..points).map(|i| if i == points - 1 { hi } else { lo + (hi - lo) * i as f64 / span }).collect()
        }
    }
}
