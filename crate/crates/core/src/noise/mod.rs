//! Noise laws used to smooth objectives.
//!
//! A [`NoiseDistribution`] is a family with its own parameters, a dimension
//! and an overall multiplier. Coordinates are drawn i.i.d.; exponential and
//! Rayleigh draws are centered by their analytic mean so the noise has zero
//! mean. Heavy-tailed families (Pareto, Cauchy, Levy) are never rescaled by
//! the normalizers because `E‖u‖` may be infinite for them.

mod tail;

pub use tail::{classify_tail, empirical_tail_test, hill_tail_index, TailClass, TailEvidence, TailLabel, TailTestConfig};

use std::f64::consts::{E, FRAC_PI_2, PI};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng;

/// Parameterized sampling law for a single coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum Family {
    Gaussian { std: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { rate: f64 },
    Rayleigh { scale: f64 },
    Pareto {
        #[serde(default = "default_pareto_shape")]
        shape: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Cauchy {
        #[serde(default = "one")]
        scale: f64,
    },
    Levy {
        #[serde(default = "one")]
        scale: f64,
    },
}

fn default_pareto_shape() -> f64 {
    1.5
}

fn one() -> f64 {
    1.0
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::Uniform { .. } => "uniform",
            Family::Exponential { .. } => "exponential",
            Family::Rayleigh { .. } => "rayleigh",
            Family::Pareto { .. } => "pareto",
            Family::Cauchy { .. } => "cauchy",
            Family::Levy { .. } => "levy",
        }
    }

    /// Whether the moment generating function is finite near zero.
    pub fn is_light_tailed(&self) -> bool {
        matches!(
            self,
            Family::Gaussian { .. } | Family::Uniform { .. } | Family::Exponential { .. } | Family::Rayleigh { .. }
        )
    }

    /// The seven reference families with default parameters.
    pub fn reference_set() -> [Family; 7] {
        [
            Family::Gaussian { std: 1.0 },
            Family::Uniform { low: -1.0, high: 1.0 },
            Family::Exponential { rate: 1.0 },
            Family::Rayleigh { scale: 1.0 },
            Family::Pareto { shape: default_pareto_shape(), scale: 1.0 },
            Family::Cauchy { scale: 1.0 },
            Family::Levy { scale: 1.0 },
        ]
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{} {name} must be finite and > 0, got {v}", self.name())))
            }
        };
        match *self {
            Family::Gaussian { std } => positive("std", std),
            Family::Uniform { low, high } => {
                if low.is_finite() && high.is_finite() && low <= high {
                    Ok(())
                } else {
                    Err(Error::param(format!("uniform endpoints must be finite with low <= high, got [{low}, {high}]")))
                }
            }
            Family::Exponential { rate } => positive("rate", rate),
            Family::Rayleigh { scale } => positive("scale", scale),
            Family::Pareto { shape, scale } => positive("shape", shape).and(positive("scale", scale)),
            Family::Cauchy { scale } | Family::Levy { scale } => positive("scale", scale),
        }
    }

    /// Offset subtracted from raw draws (zero except exponential / Rayleigh).
    fn centering(&self) -> f64 {
        match *self {
            Family::Exponential { rate } => 1.0 / rate,
            Family::Rayleigh { scale } => scale * FRAC_PI_2.sqrt(),
            _ => 0.0,
        }
    }

    fn draw(&self, rng: &mut rng::Rng) -> f64 {
        let raw = match *self {
            Family::Gaussian { std } => {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            }
            Family::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Family::Exponential { rate } => -open_unit(rng).ln() / rate,
            Family::Rayleigh { scale } => scale * (-2.0 * open_unit(rng).ln()).sqrt(),
            Family::Pareto { shape, scale } => scale * open_unit(rng).powf(-1.0 / shape),
            Family::Cauchy { scale } => scale * (PI * (rng.random::<f64>() - 0.5)).tan(),
            Family::Levy { scale } => {
                let z: f64 = StandardNormal.sample(rng);
                scale / (z * z)
            }
        };
        raw - self.centering()
    }

    /// Closed-form `E|v|` for one centered coordinate, when known.
    fn mean_abs(&self) -> Option<f64> {
        match *self {
            Family::Gaussian { std } => Some(std * (2.0 / PI).sqrt()),
            Family::Uniform { low, high } => Some(uniform_mean_abs(low, high)),
            Family::Exponential { rate } => Some(2.0 / (E * rate)),
            Family::Rayleigh { scale } => {
                let mu = scale * FRAC_PI_2.sqrt();
                Some(2.0 * mu * (1.0 - erf(PI.sqrt() / 2.0)))
            }
            _ => None,
        }
    }

    /// Closed-form `E[v²]` for one centered coordinate, when finite.
    fn second_moment(&self) -> Option<f64> {
        match *self {
            Family::Gaussian { std } => Some(std * std),
            Family::Uniform { low, high } => Some((low * low + low * high + high * high) / 3.0),
            Family::Exponential { rate } => Some(1.0 / (rate * rate)),
            Family::Rayleigh { scale } => Some((4.0 - PI) / 2.0 * scale * scale),
            _ => None,
        }
    }
}

/// Uniform on `(0, 1]`, which keeps the inverse CDFs finite.
fn open_unit(rng: &mut rng::Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

fn uniform_mean_abs(a: f64, b: f64) -> f64 {
    if a == b {
        a.abs()
    } else if a >= 0.0 {
        (a + b) / 2.0
    } else if b <= 0.0 {
        -(a + b) / 2.0
    } else {
        (a * a + b * b) / (2.0 * (b - a))
    }
}

/// A noise law in `dim` dimensions: i.i.d. coordinates from `family`,
/// multiplied by `scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseDistribution {
    pub family: Family,
    pub dim: usize,
    pub scale: f64,
}

impl NoiseDistribution {
    pub fn new(family: Family, dim: usize) -> Result<Self> {
        Self::with_scale(family, dim, 1.0)
    }

    pub fn with_scale(family: Family, dim: usize, scale: f64) -> Result<Self> {
        let dist = NoiseDistribution { family, dim, scale };
        dist.validate()?;
        Ok(dist)
    }

    /// Gaussian with covariance `(1/√d)·I`.
    pub fn isotropic_gaussian(dim: usize) -> Result<Self> {
        Self::new(Family::Gaussian { std: (dim as f64).powf(-0.25) }, dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::param("noise dimension must be >= 1"));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::param(format!("noise scale must be finite and >= 0, got {}", self.scale)));
        }
        self.family.validate()
    }

    pub fn name(&self) -> &'static str {
        self.family.name()
    }

    pub fn is_light_tailed(&self) -> bool {
        self.family.is_light_tailed()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        NoiseDistribution { scale: self.scale * factor, ..*self }
    }

    /// One draw of `u` written into `out` (length `dim`).
    pub fn draw_into(&self, rng: &mut rng::Rng, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.scale * self.family.draw(rng);
        }
    }

    /// Analytic `E‖u‖`, available for Gaussians in any dimension and for the
    /// other light-tailed families in one dimension.
    pub fn analytic_mean_norm(&self) -> Option<f64> {
        match self.family {
            Family::Gaussian { std } => {
                let d = self.dim as f64;
                let ratio = (ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp();
                Some(self.scale * std * 2f64.sqrt() * ratio)
            }
            _ if self.dim == 1 => self.family.mean_abs().map(|m| self.scale * m),
            _ => None,
        }
    }

    /// Analytic `E‖u‖²` (light-tailed families only).
    pub fn analytic_second_moment(&self) -> Option<f64> {
        self.family
            .second_moment()
            .map(|m| self.scale * self.scale * m * self.dim as f64)
    }
}

/// `n × dim` matrix of noise draws, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    /// Wraps row-major `data`; its length must be a positive multiple of `dim`.
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::param(format!("{} values do not form rows of length {dim}", data.len())));
        }
        Ok(SampleMatrix { dim, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Euclidean norm of every row.
    pub fn norms(&self) -> Vec<f64> {
        self.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

/// Draws `n` samples; identical `(dist, n, seed)` give bit-identical output.
pub fn sample(dist: &NoiseDistribution, n: usize, seed: u64) -> Result<SampleMatrix> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::param("sample count must be >= 1"));
    }
    let mut rng = rng::from_seed(seed);
    let mut data = vec![0.0; n * dist.dim];
    for row in data.chunks_exact_mut(dist.dim) {
        dist.draw_into(&mut rng, row);
    }
    Ok(SampleMatrix { dim: dist.dim, data })
}

/// Which moment a normalizer pins to one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKind {
    /// `E‖u‖ = 1`.
    UnitExpectedNorm,
    /// `E‖u‖² = 1`.
    UnitSecondMoment,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleSource {
    Analytic,
    Empirical { n_cal: usize },
    /// Heavy-tailed input returned unscaled.
    PassThrough,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub dist: NoiseDistribution,
    pub kind: NormalizationKind,
    pub factor: f64,
    pub source: ScaleSource,
}

impl Normalized {
    pub fn is_passthrough(&self) -> bool {
        self.source == ScaleSource::PassThrough
    }
}

/// Rescales `dist` so that `E‖u‖ = 1`.
pub fn normalize_unit_expectation(dist: &NoiseDistribution, n_cal: usize, seed: u64) -> Result<Normalized> {
    normalize(dist, NormalizationKind::UnitExpectedNorm, n_cal, seed)
}

/// Rescales `dist` so that `E‖u‖² = 1`.
pub fn normalize_unit_second_moment(dist: &NoiseDistribution, n_cal: usize, seed: u64) -> Result<Normalized> {
    normalize(dist, NormalizationKind::UnitSecondMoment, n_cal, seed)
}

pub fn normalize(dist: &NoiseDistribution, kind: NormalizationKind, n_cal: usize, seed: u64) -> Result<Normalized> {
    dist.validate()?;
    if !dist.is_light_tailed() {
        return Ok(Normalized { dist: *dist, kind, factor: 1.0, source: ScaleSource::PassThrough });
    }
    let analytic = match kind {
        NormalizationKind::UnitExpectedNorm => dist.analytic_mean_norm(),
        NormalizationKind::UnitSecondMoment => dist.analytic_second_moment().map(f64::sqrt),
    };
    let (current, source) = match analytic {
        Some(v) => (v, ScaleSource::Analytic),
        None => {
            if n_cal < 2 {
                return Err(Error::param("empirical normalization needs n_cal >= 2"));
            }
            let norms = sample(dist, n_cal, seed)?.norms();
            let v = match kind {
                NormalizationKind::UnitExpectedNorm => norms.iter().sum::<f64>() / n_cal as f64,
                NormalizationKind::UnitSecondMoment => (norms.iter().map(|r| r * r).sum::<f64>() / n_cal as f64).sqrt(),
            };
            (v, ScaleSource::Empirical { n_cal })
        }
    };
    if !(current > 0.0 && current.is_finite()) {
        return Err(Error::param(format!("{} has zero or undefined norm moment; cannot normalize", dist.name())));
    }
    let factor = 1.0 / current;
    Ok(Normalized { dist: dist.scaled(factor), kind, factor, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{excess_kurtosis, mean_std};

    fn d1(f: Family) -> NoiseDistribution {
        NoiseDistribution::new(f, 1).unwrap()
    }

    #[test]
    fn degenerate_uniform_samples_zero() {
        let m = sample(&d1(Family::Uniform { low: 0.0, high: 0.0 }), 3, 1).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gaussian_moments() {
        let n = 1_000_000;
        let m = sample(&d1(Family::Gaussian { std: 1.0 }), n, 11).unwrap();
        let xs = m.as_slice();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let second = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((second - 1.0).abs() < 5e-3, "E[u^2] {second}");
    }

    #[test]
    fn cauchy_kurtosis_dwarfs_gaussian() {
        let n = 100_000;
        let g = sample(&d1(Family::Gaussian { std: 1.0 }), n, 3).unwrap();
        let c = sample(&d1(Family::Cauchy { scale: 1.0 }), n, 3).unwrap();
        let kg = excess_kurtosis(g.as_slice());
        let kc = excess_kurtosis(c.as_slice());
        assert!(kc >= 10.0 * kg.abs() && kc + 3.0 >= 10.0 * (kg + 3.0), "cauchy {kc}, gaussian {kg}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(NoiseDistribution::new(Family::Pareto { shape: 0.0, scale: 1.0 }, 1).is_err());
        assert!(NoiseDistribution::new(Family::Uniform { low: 1.0, high: -1.0 }, 1).is_err());
        assert!(NoiseDistribution::new(Family::Gaussian { std: 1.0 }, 0).is_err());
        assert!(sample(&d1(Family::Cauchy { scale: 1.0 }), 0, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = NoiseDistribution::new(Family::Rayleigh { scale: 2.0 }, 3).unwrap();
        assert_eq!(sample(&d, 50, 9).unwrap(), sample(&d, 50, 9).unwrap());
        assert_ne!(sample(&d, 50, 9).unwrap(), sample(&d, 50, 10).unwrap());
    }

    #[test]
    fn closed_form_scale_factors() {
        let g = normalize_unit_expectation(&d1(Family::Gaussian { std: 1.0 }), 0, 0).unwrap();
        assert!((g.factor - (PI / 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(g.source, ScaleSource::Analytic);
        let u = normalize_unit_expectation(&d1(Family::Uniform { low: -1.0, high: 1.0 }), 0, 0).unwrap();
        assert!((u.factor - 2.0).abs() < 1e-12);
        let c = normalize_unit_expectation(&d1(Family::Cauchy { scale: 1.0 }), 10, 0).unwrap();
        assert!(c.is_passthrough());
        assert_eq!(c.dist, d1(Family::Cauchy { scale: 1.0 }));
    }

    #[test]
    fn second_moment_normalization_of_standard_normal_is_identity() {
        let g = normalize_unit_second_moment(&d1(Family::Gaussian { std: 1.0 }), 0, 0).unwrap();
        assert!((g.factor - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_distribution_cannot_be_normalized() {
        assert!(normalize_unit_expectation(&d1(Family::Uniform { low: 0.0, high: 0.0 }), 10, 0).is_err());
    }

    // Analytic E|u| of the centered families against plain Monte Carlo.
    #[test]
    fn analytic_mean_abs_matches_monte_carlo() {
        let n = 400_000;
        for fam in [
            Family::Exponential { rate: 2.0 },
            Family::Rayleigh { scale: 1.5 },
            Family::Uniform { low: -0.5, high: 2.0 },
            Family::Uniform { low: 1.0, high: 2.0 },
        ] {
            let d = d1(fam);
            let m = sample(&d, n, 5).unwrap();
            let abs: Vec<f64> = m.as_slice().iter().map(|v| v.abs()).collect();
            let (mean, std) = mean_std(&abs);
            let expected = d.analytic_mean_norm().unwrap();
            assert!((mean - expected).abs() <= 4.0 * std / (n as f64).sqrt(), "{fam:?}: {mean} vs {expected}");
        }
        // Gaussian in d dims: E‖u‖ through the gamma-function ratio
        let d = NoiseDistribution::new(Family::Gaussian { std: 0.7 }, 5).unwrap();
        let norms = sample(&d, n, 6).unwrap().norms();
        let (mean, std) = mean_std(&norms);
        assert!((mean - d.analytic_mean_norm().unwrap()).abs() <= 4.0 * std / (n as f64).sqrt());
    }

    #[test]
    fn centered_families_have_zero_mean() {
        let n = 400_000;
        for fam in [Family::Exponential { rate: 0.5 }, Family::Rayleigh { scale: 3.0 }] {
            let m = sample(&d1(fam), n, 8).unwrap();
            let (mean, std) = mean_std(m.as_slice());
            assert!(mean.abs() <= 4.0 * std / (n as f64).sqrt(), "{fam:?} mean {mean}");
        }
    }

    #[test]
    fn light_tailed_normalization_gives_unit_mean_norm() {
        let n = 200_000;
        for fam in Family::reference_set().into_iter().filter(Family::is_light_tailed) {
            for dim in [1, 3] {
                let dist = NoiseDistribution::new(fam, dim).unwrap();
                let normed = normalize_unit_expectation(&dist, 200_000, 77).unwrap();
                let norms = sample(&normed.dist, n, 78).unwrap().norms();
                let (mean, std) = mean_std(&norms);
                assert!(
                    (mean - 1.0).abs() <= 4.0 * std / (n as f64).sqrt(),
                    "{} d={dim}: E|u| = {mean} ({:?})",
                    fam.name(),
                    normed.source
                );
            }
        }
    }

    #[test]
    fn family_config_round_trip() {
        let f: Family = serde_json::from_str(r#"{"family":"pareto"}"#).unwrap();
        assert_eq!(f, Family::Pareto { shape: 1.5, scale: 1.0 });
        assert!(serde_json::from_str::<Family>(r#"{"family":"cauchy","shape":2}"#).is_err());
    }
}
