//! Differentiable test objectives and their metadata.

mod benchmarks;
mod finite_sum;
mod smoothed;

pub use benchmarks::{
    dropwave1d, rastrigin1d, scalar_ce, scalar_mse, DropWave1d, Linear, Quadratic, Rastrigin, ScalarCe, ScalarMse,
};
pub use finite_sum::{make_finite_sum, minibatch_grad, BatchSampling, FiniteSum};
pub use smoothed::{
    analytic_smoothed, locate_minimizer_1d, AnalyticFamily, AnalyticForm, MonteCarloFamily, SmoothedFamily, SmoothedObjective,
    Unsmoothed,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants that accompany an objective on its declared domain box.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// `L_f`: Lipschitz constant of `f` on `domain`.
    pub lipschitz: Option<f64>,
    /// `L_g`: Lipschitz constant of `∇f` on `domain`.
    pub smoothness: Option<f64>,
    /// Per-coordinate `[lo, hi]` bounds.
    pub domain: Vec<(f64, f64)>,
    pub minimizer: Option<Vec<f64>>,
    /// Strong-convexity modulus, when `f` is strongly convex on `domain`.
    pub strong_convexity: Option<f64>,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn metadata(&self) -> &Metadata;

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }
}

impl<T: Objective + ?Sized> Objective for Arc<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient_into(x, out)
    }
    fn metadata(&self) -> &Metadata {
        (**self).metadata()
    }
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient_into(x, out)
    }
    fn metadata(&self) -> &Metadata {
        (**self).metadata()
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `max |g(x)|` over `points` evenly spaced samples of `[lo, hi]`.
pub(crate) fn grid_max_abs(lo: f64, hi: f64, points: usize, g: impl Fn(f64) -> f64) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| g(lo + step * i as f64).abs()).fold(0.0, f64::max)
}

/// Points used for dense grid maximization of derivative bounds.
pub(crate) const METADATA_GRID: usize = 102_401;

/// Objective selection by string id, as used in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Rastrigin1d {
        #[serde(default)]
        domain: Option<(f64, f64)>,
    },
    Rastrigin {
        dim: usize,
        #[serde(default)]
        domain: Option<(f64, f64)>,
    },
    Dropwave1d {
        #[serde(default)]
        domain: Option<(f64, f64)>,
    },
    Quadratic {
        curvature: Vec<f64>,
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default)]
        domain: Option<(f64, f64)>,
    },
    ScalarCe {
        #[serde(default)]
        lower: Option<f64>,
    },
    ScalarMse {
        #[serde(default)]
        domain: Option<(f64, f64)>,
    },
    Linear {
        slope: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<Arc<dyn Objective>> {
        Ok(match self {
            ObjectiveSpec::Rastrigin1d { domain } => Arc::new(Rastrigin::new(1, domain.unwrap_or(Rastrigin::DEFAULT_DOMAIN))?),
            ObjectiveSpec::Rastrigin { dim, domain } => {
                Arc::new(Rastrigin::new(*dim, domain.unwrap_or(Rastrigin::DEFAULT_DOMAIN))?)
            }
            ObjectiveSpec::Dropwave1d { domain } => Arc::new(DropWave1d::new(domain.unwrap_or(DropWave1d::DEFAULT_DOMAIN))?),
            ObjectiveSpec::Quadratic { curvature, center, domain } => {
                let center = center.clone().unwrap_or_else(|| vec![0.0; curvature.len()]);
                Arc::new(Quadratic::new(curvature.clone(), center, domain.unwrap_or((-1.0, 1.0)))?)
            }
            ObjectiveSpec::ScalarCe { lower } => Arc::new(ScalarCe::new(lower.unwrap_or(ScalarCe::DEFAULT_LOWER))?),
            ObjectiveSpec::ScalarMse { domain } => Arc::new(ScalarMse::new(domain.unwrap_or((-1.0, 1.0)))?),
            ObjectiveSpec::Linear { slope, offset } => Arc::new(Linear::new(slope.clone(), *offset)?),
        })
    }

    /// Closed-form Gaussian-smoothed family for this objective, if one exists.
    pub fn analytic_family(&self) -> Result<Arc<dyn SmoothedFamily>> {
        let obj = self.build()?;
        let form = match self {
            ObjectiveSpec::Rastrigin1d { .. } | ObjectiveSpec::Rastrigin { .. } => AnalyticForm::Rastrigin,
            ObjectiveSpec::Quadratic { .. } => AnalyticForm::Quadratic,
            ObjectiveSpec::ScalarCe { .. } => AnalyticForm::ScalarCe,
            ObjectiveSpec::ScalarMse { .. } => AnalyticForm::ScalarMse,
            other => return Err(Error::NotAvailable(format!("{other:?} under Gaussian noise"))),
        };
        Ok(Arc::new(smoothed::AnalyticFamily::new(form, obj)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parses_by_id() {
        let s: ObjectiveSpec = serde_json::from_str(r#"{"id":"rastrigin1d"}"#).unwrap();
        let obj = s.build().unwrap();
        assert_eq!(obj.dim(), 1);
        assert_eq!(obj.value(&[0.0]), 0.0);
        assert!(serde_json::from_str::<ObjectiveSpec>(r#"{"id":"rosenbrock"}"#).is_err());
        let dw: ObjectiveSpec = serde_json::from_str(r#"{"id":"dropwave1d"}"#).unwrap();
        assert!(matches!(dw.analytic_family(), Err(Error::NotAvailable(_))));
    }
}
