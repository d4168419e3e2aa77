//! Smoothed surrogates `f_δ(x) = E[f(x − δu)]`, either in closed form under
//! standard Gaussian `u` or as a sample average over a fixed noise panel.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::benchmarks::{rastrigin_d1, rastrigin_d2};
use super::{Metadata, Objective};
use crate::error::{Error, Result};
use crate::noise::SampleMatrix;

/// Objectives with a known Gaussian-smoothed closed form. `u` has unit
/// variance per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticForm {
    /// `−ln x + δ²/(2x²)`, a second-order Taylor approximation.
    ScalarCe,
    /// `x² + δ²`.
    ScalarMse,
    /// `Σ x² + δ² − 10 cos(2πx) e^{−2π²δ²} + 10`.
    Rastrigin,
    /// `f(x) + δ² tr(H)/2`.
    Quadratic,
}

impl AnalyticForm {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "scalar_ce" => Ok(AnalyticForm::ScalarCe),
            "scalar_mse" => Ok(AnalyticForm::ScalarMse),
            "rastrigin1d" | "rastrigin" => Ok(AnalyticForm::Rastrigin),
            "quadratic" => Ok(AnalyticForm::Quadratic),
            other => Err(Error::NotAvailable(other.to_string())),
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, AnalyticForm::ScalarCe)
    }
}

/// Closed-form smoothed value of a 1-D objective by id. `quadratic` here
/// means `x²`.
pub fn analytic_smoothed(id: &str, x: f64, delta: f64) -> Result<f64> {
    let form = AnalyticForm::from_id(id)?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::param(format!("delta must be finite and >= 0, got {delta}")));
    }
    Ok(match form {
        AnalyticForm::ScalarCe => {
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::Domain { name: "scalar_ce", x, domain: "(0, 1]" });
            }
            -x.ln() + delta * delta / (2.0 * x * x)
        }
        AnalyticForm::ScalarMse | AnalyticForm::Quadratic => x * x + delta * delta,
        AnalyticForm::Rastrigin => rastrigin_smoothed(x, delta),
    })
}

fn rastrigin_damping(delta: f64) -> f64 {
    (-2.0 * PI * PI * delta * delta).exp()
}

fn rastrigin_smoothed(x: f64, delta: f64) -> f64 {
    x * x + delta * delta - 10.0 * (2.0 * PI * x).cos() * rastrigin_damping(delta) + 10.0
}

/// A one-parameter family `δ ↦ f_δ`.
pub trait SmoothedFamily: Send + Sync {
    fn name(&self) -> String;

    fn base(&self) -> &Arc<dyn Objective>;

    /// The surrogate at degree of smoothing `delta`.
    fn at(&self, delta: f64) -> Arc<dyn Objective>;

    /// Whether `at` is exact rather than an approximation.
    fn is_exact(&self) -> bool;

    fn dim(&self) -> usize {
        self.base().dim()
    }

    /// `x*_δ`: from metadata when known, else located numerically in 1-D.
    fn minimizer(&self, delta: f64) -> Option<Vec<f64>> {
        let obj = self.at(delta);
        if let Some(m) = &obj.metadata().minimizer {
            return Some(m.clone());
        }
        if obj.dim() != 1 {
            return None;
        }
        let (lo, hi) = obj.metadata().domain[0];
        Some(vec![locate_minimizer_1d(obj.as_ref(), lo, hi)])
    }
}

/// Closed-form surrogate at a fixed `delta`.
pub struct SmoothedObjective {
    form: AnalyticForm,
    base: Arc<dyn Objective>,
    delta: f64,
    shift: f64,
    meta: Metadata,
}

impl SmoothedObjective {
    pub fn new(form: AnalyticForm, base: Arc<dyn Objective>, delta: f64) -> Self {
        let d2 = delta * delta;
        let bm = base.metadata();
        let (shift, minimizer, sigma) = match form {
            AnalyticForm::Quadratic => {
                // tr(H) from the curvature seen by finite differences of the gradient
                let x0 = vec![0.0; base.dim()];
                let g0 = base.gradient(&x0);
                let mut tr = 0.0;
                let mut e = x0.clone();
                for i in 0..base.dim() {
                    e[i] = 1.0;
                    tr += base.gradient(&e)[i] - g0[i];
                    e[i] = 0.0;
                }
                (0.5 * d2 * tr, bm.minimizer.clone(), bm.strong_convexity)
            }
            AnalyticForm::ScalarMse => (d2, bm.minimizer.clone(), Some(2.0)),
            AnalyticForm::ScalarCe => (0.0, Some(vec![bm.domain[0].1]), Some(1.0 + 3.0 * d2)),
            AnalyticForm::Rastrigin => {
                let c_min = if 6.0 * PI * delta >= PI { -1.0 } else { (6.0 * PI * delta).cos() };
                let s = 2.0 + 40.0 * PI * PI * rastrigin_damping(delta) * c_min;
                (0.0, bm.minimizer.clone(), (s > 0.0).then_some(s))
            }
        };
        let meta = Metadata {
            lipschitz: bm.lipschitz,
            smoothness: bm.smoothness,
            domain: bm.domain.clone(),
            minimizer,
            strong_convexity: sigma,
        };
        SmoothedObjective { form, base, delta, shift, meta }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Objective for SmoothedObjective {
    fn name(&self) -> String {
        format!("{}~{}", self.base.name(), self.delta)
    }
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let d2 = self.delta * self.delta;
        match self.form {
            AnalyticForm::Rastrigin => x.iter().map(|&v| rastrigin_smoothed(v, self.delta)).sum(),
            AnalyticForm::ScalarCe => {
                if x[0] > 0.0 {
                    -x[0].ln() + d2 / (2.0 * x[0] * x[0])
                } else {
                    f64::NAN
                }
            }
            AnalyticForm::ScalarMse | AnalyticForm::Quadratic => self.base.value(x) + self.shift,
        }
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d2 = self.delta * self.delta;
        match self.form {
            AnalyticForm::Rastrigin => {
                let a = rastrigin_damping(self.delta);
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v + a * (rastrigin_d1(v) - 2.0 * v);
                }
            }
            AnalyticForm::ScalarCe => {
                let v = x[0];
                out[0] = if v > 0.0 { -1.0 / v - d2 / (v * v * v) } else { f64::NAN };
            }
            AnalyticForm::ScalarMse | AnalyticForm::Quadratic => self.base.gradient_into(x, out),
        }
    }
    fn metadata(&self) -> &Metadata {
        &self.meta
    }
}

impl SmoothedObjective {
    /// Second derivative of the 1-D smoothed Rastrigin.
    pub fn rastrigin_curvature(x: f64, delta: f64) -> f64 {
        2.0 + rastrigin_damping(delta) * (rastrigin_d2(x) - 2.0)
    }
}

pub struct AnalyticFamily {
    form: AnalyticForm,
    base: Arc<dyn Objective>,
}

impl AnalyticFamily {
    pub fn new(form: AnalyticForm, base: Arc<dyn Objective>) -> Self {
        AnalyticFamily { form, base }
    }
}

impl SmoothedFamily for AnalyticFamily {
    fn name(&self) -> String {
        format!("{}-gaussian-closed-form", self.base.name())
    }
    fn base(&self) -> &Arc<dyn Objective> {
        &self.base
    }
    fn at(&self, delta: f64) -> Arc<dyn Objective> {
        Arc::new(SmoothedObjective::new(self.form, self.base.clone(), delta))
    }
    fn is_exact(&self) -> bool {
        self.form.is_exact()
    }
}

/// The base objective at every `δ`; runs graduated schedules without smoothing.
pub struct Unsmoothed {
    base: Arc<dyn Objective>,
}

impl Unsmoothed {
    pub fn new(base: Arc<dyn Objective>) -> Self {
        Unsmoothed { base }
    }
}

impl SmoothedFamily for Unsmoothed {
    fn name(&self) -> String {
        self.base.name()
    }
    fn base(&self) -> &Arc<dyn Objective> {
        &self.base
    }
    fn at(&self, _delta: f64) -> Arc<dyn Objective> {
        self.base.clone()
    }
    fn is_exact(&self) -> bool {
        true
    }
}

/// Sample-average surrogate `(1/N) Σ f(x − δu_k)` over one fixed panel, so
/// that every `δ` and every `x` share the same draws.
pub struct MonteCarloFamily {
    base: Arc<dyn Objective>,
    panel: Arc<SampleMatrix>,
    label: String,
}

impl MonteCarloFamily {
    pub fn new(base: Arc<dyn Objective>, panel: SampleMatrix, label: impl Into<String>) -> Result<Self> {
        if panel.dim() != base.dim() {
            return Err(Error::param(format!(
                "panel dimension {} does not match objective dimension {}",
                panel.dim(),
                base.dim()
            )));
        }
        Ok(MonteCarloFamily { base, panel: Arc::new(panel), label: label.into() })
    }
}

impl SmoothedFamily for MonteCarloFamily {
    fn name(&self) -> String {
        format!("{}-{}-panel{}", self.base.name(), self.label, self.panel.rows())
    }
    fn base(&self) -> &Arc<dyn Objective> {
        &self.base
    }
    fn at(&self, delta: f64) -> Arc<dyn Objective> {
        let bm = self.base.metadata();
        Arc::new(PanelSmoothed {
            base: self.base.clone(),
            panel: self.panel.clone(),
            delta,
            meta: Metadata {
                lipschitz: bm.lipschitz,
                smoothness: bm.smoothness,
                domain: bm.domain.clone(),
                minimizer: None,
                strong_convexity: None,
            },
        })
    }
    fn is_exact(&self) -> bool {
        false
    }
}

struct PanelSmoothed {
    base: Arc<dyn Objective>,
    panel: Arc<SampleMatrix>,
    delta: f64,
    meta: Metadata,
}

impl Objective for PanelSmoothed {
    fn name(&self) -> String {
        format!("{}~mc{}", self.base.name(), self.delta)
    }
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        let mut acc = 0.0;
        for u in self.panel.iter_rows() {
            for ((yi, xi), ui) in y.iter_mut().zip(x).zip(u) {
                *yi = xi - self.delta * ui;
            }
            acc += self.base.value(&y);
        }
        acc / self.panel.rows() as f64
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let mut y = vec![0.0; x.len()];
        let mut g = vec![0.0; x.len()];
        out.fill(0.0);
        for u in self.panel.iter_rows() {
            for ((yi, xi), ui) in y.iter_mut().zip(x).zip(u) {
                *yi = xi - self.delta * ui;
            }
            self.base.gradient_into(&y, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += gi;
            }
        }
        let n = self.panel.rows() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
    fn metadata(&self) -> &Metadata {
        &self.meta
    }
}

/// Global minimizer of a 1-D objective on `[lo, hi]`: a 10⁴-point grid scan
/// followed by 100 bisection steps on the sign of `f'` around the best cell.
pub fn locate_minimizer_1d(obj: &dyn Objective, lo: f64, hi: f64) -> f64 {
    const GRID: usize = 10_000;
    let step = (hi - lo) / (GRID - 1) as f64;
    let at = |i: usize| if i == GRID - 1 { hi } else { lo + step * i as f64 };
    let mut best = (0, f64::INFINITY);
    for i in 0..GRID {
        let v = obj.value(&[at(i)]);
        if v < best.1 {
            best = (i, v);
        }
    }
    let i = best.0;
    let grad = |x: f64| obj.gradient(&[x])[0];
    let (mut a, mut b) = (at(i.saturating_sub(1)), at((i + 1).min(GRID - 1)));
    let (ga, gb) = (grad(a), grad(b));
    if !(ga <= 0.0 && gb >= 0.0) {
        // minimum sits on the boundary or the cell has no sign change
        return at(i);
    }
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if grad(m) > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    let x = 0.5 * (a + b);
    if obj.value(&[x]) <= best.1 { x } else { at(i) }
}
