use std::f64::consts::PI;

use super::{grid_max_abs, Metadata, Objective, METADATA_GRID};
use crate::error::{Error, Result};

pub fn rastrigin1d(x: f64) -> f64 {
    x * x - 10.0 * (2.0 * PI * x).cos() + 10.0
}

pub fn dropwave1d(x: f64) -> f64 {
    -(1.0 + (12.0 * PI * x).cos()) / (0.5 * x * x + 2.0)
}

/// `-ln x`, defined on `(0, 1]`.
pub fn scalar_ce(x: f64) -> Result<f64> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::Domain { name: "scalar_ce", x, domain: "(0, 1]" });
    }
    Ok(-x.ln())
}

pub fn scalar_mse(x: f64) -> f64 {
    x * x
}

fn check_box(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::param(format!("domain box [{lo}, {hi}] must be finite and ordered")));
    }
    Ok(())
}

pub(crate) fn rastrigin_d1(x: f64) -> f64 {
    2.0 * x + 20.0 * PI * (2.0 * PI * x).sin()
}

pub(crate) fn rastrigin_d2(x: f64) -> f64 {
    2.0 + 40.0 * PI * PI * (2.0 * PI * x).cos()
}

/// `Σ x_i² − 10 cos(2π x_i) + 10`, separable in each coordinate.
#[derive(Clone, Debug)]
pub struct Rastrigin {
    dim: usize,
    meta: Metadata,
}

impl Rastrigin {
    pub const DEFAULT_DOMAIN: (f64, f64) = (-5.12, 5.12);

    pub fn new(dim: usize, domain: (f64, f64)) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be positive"));
        }
        check_box(domain.0, domain.1)?;
        let d1 = grid_max_abs(domain.0, domain.1, METADATA_GRID, rastrigin_d1);
        let d2 = grid_max_abs(domain.0, domain.1, METADATA_GRID, rastrigin_d2);
        let has_origin = domain.0 <= 0.0 && 0.0 <= domain.1;
        Ok(Rastrigin {
            dim,
            meta: Metadata {
                lipschitz: Some((dim as f64).sqrt() * d1),
                smoothness: Some(d2),
                domain: vec![domain; dim],
                minimizer: has_origin.then(|| vec![0.0; dim]),
                strong_convexity: None,
            },
        })
    }

    pub fn one_d() -> Self {
        Self::new(1, Self::DEFAULT_DOMAIN).expect("default box is valid")
    }
}

impl Objective for Rastrigin {
    fn name(&self) -> String {
        if self.dim == 1 { "rastrigin1d".into() } else { format!("rastrigin{}d", self.dim) }
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| rastrigin1d(v)).sum()
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = rastrigin_d1(v);
        }
    }
    fn metadata(&self) -> &Metadata {
        &self.meta
    }
}

#[derive(Clone, Debug)]
pub struct DropWave1d {
    meta: Metadata,
}

fn dropwave_parts(x: f64) -> (f64, f64, f64) {
    // f = -N/D with N = 1 + cos(12πx), D = x²/2 + 2
    let w = 12.0 * PI;
    let n = 1.0 + (w * x).cos();
    let dn = -w * (w * x).sin();
    let d2n = -w * w * (w * x).cos();
    let d = 0.5 * x * x + 2.0;
    let dd = x;
    let f = -n / d;
    let f1 = -(dn * d - n * dd) / (d * d);
    // (N/D)'' = N''/D − 2N'D'/D² − N D''/D² + 2N D'²/D³, with D'' = 1
    let f2 = -(d2n / d - 2.0 * dn * dd / (d * d) - n / (d * d) + 2.0 * n * dd * dd / (d * d * d));
    (f, f1, f2)
}

impl DropWave1d {
    pub const DEFAULT_DOMAIN: (f64, f64) = (-5.12, 5.12);

    pub fn new(domain: (f64, f64)) -> Result<Self> {
        check_box(domain.0, domain.1)?;
        let d1 = grid_max_abs(domain.0, domain.1, METADATA_GRID, |x| dropwave_parts(x).1);
        let d2 = grid_max_abs(domain.0, domain.1, METADATA_GRID, |x| dropwave_parts(x).2);
        let has_origin = domain.0 <= 0.0 && 0.0 <= domain.1;
        Ok(DropWave1d {
            meta: Metadata {
                lipschitz: Some(d1),
                smoothness: Some(d2),
                domain: vec![domain],
                minimizer: has_origin.then(|| vec![0.0]),
                strong_convexity: None,
            },
        })
    }
}

impl Default for DropWave1d {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DOMAIN).expect("default box is valid")
    }
}

impl Objective for DropWave1d {
    fn name(&self) -> String {
        "dropwave1d".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        dropwave1d(x[0])
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = dropwave_parts(x[0]).1;
    }
    fn metadata(&self) -> &Metadata {
        &self.meta
    }
}

/// Diagonal quadratic `½ Σ h_i (x_i − c_i)²`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    curvature: Vec<f64>,
    center: Vec<f64>,
    meta: Metadata,
}

impl Quadratic {
    pub fn new(curvature: Vec<f64>, center: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        if curvature.is_empty() || curvature.len() != center.len() {
            return Err(Error::param("curvature and center must be non-empty and of equal length"));
        }
        if curvature.iter().any(|&h| !(h >= 0.0 && h.is_finite())) {
            return Err(Error::param("curvature entries must be finite and non-negative"));
        }
        check_box(domain.0, domain.1)?;
        let hmax = curvature.iter().cloned().fold(0.0, f64::max);
        let hmin = curvature.iter().cloned().fold(f64::INFINITY, f64::min);
        // sup of ‖H(x − c)‖ over the box is attained at a corner
        let lf = curvature
            .iter()
            .zip(&center)
            .map(|(&h, &c)| {
                let r = (domain.0 - c).abs().max((domain.1 - c).abs());
                (h * r).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let d = curvature.len();
        Ok(Quadratic {
            meta: Metadata {
                lipschitz: Some(lf),
                smoothness: Some(hmax),
                domain: vec![domain; d],
                minimizer: (hmin > 0.0).then(|| center.clone()),
                strong_convexity: (hmin > 0.0).then_some(hmin),
            },
            curvature,
            center,
        })
    }

    /// `f(x) = x²` on `[-1, 1]`.
    pub fn square() -> Self {
        Self::new(vec![2.0], vec![0.0], (-1.0, 1.0)).expect("valid")
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }
}

impl Objective for Quadratic {
    fn name(&self) -> String {
        "quadratic".into()
    }
    fn dim(&self) -> usize {
        self.curvature.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.curvature.iter().zip(&self.center).zip(x).map(|((h, c), v)| 0.5 * h * (v - c) * (v - c)).sum()
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, h), c), v) in out.iter_mut().zip(&self.curvature).zip(&self.center).zip(x) {
            *o = h * (v - c);
        }
    }
    fn metadata(&self) -> &Metadata {
        &self.meta
    }
}

/// `-ln x` on `[lower, 1]`. Values off `(0, ∞)` are NaN so that smoothing
/// counts them as non-finite samples.
#[derive(Clone, Debug)]
pub struct ScalarCe {
    meta: Metadata,
}

impl ScalarCe {
    pub const DEFAULT_LOWER: f64 = 0.1;

    pub fn new(lower: f64) -> Result<Self> {
        if !(lower > 0.0 && lower < 1.0) {
            return Err(Error::param(format!("scalar_ce lower bound {lower} must lie in (0, 1)")));
        }
        Ok(ScalarCe {
            meta: Metadata {
                lipschitz: Some(1.0 / lower),
                smoothness: Some(1.0 / (lower * lower)),
                domain: vec![(lower, 1.0)],
                minimizer: Some(vec![1.0]),
                strong_convexity: Some(1.0),
            },
        })
    }
}

impl Default for ScalarCe {
    fn default() -> Self {
        Self::new(Self::DEFAULT_LOWER).expect("valid")
    }
}

impl Objective for ScalarCe {
    fn name(&self) -> String {
        "scalar_ce".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        if x[0] > 0.0 { -x[0].ln() } else { f64::NAN }
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = if x[0] > 0.0 { -1.0 / x[0] } else { f64::NAN };
    }
    fn metadata(&self) -> &Metadata {
        &self.meta
    }
}

#[derive(Clone, Debug)]
pub struct ScalarMse {
    meta: Metadata,
}

impl ScalarMse {
    pub fn new(domain: (f64, f64)) -> Result<Self> {
        check_box(domain.0, domain.1)?;
        let has_origin = domain.0 <= 0.0 && 0.0 <= domain.1;
        Ok(ScalarMse {
            meta: Metadata {
                lipschitz: Some(2.0 * domain.0.abs().max(domain.1.abs())),
                smoothness: Some(2.0),
                domain: vec![domain],
                minimizer: has_origin.then(|| vec![0.0]),
                strong_convexity: Some(2.0),
            },
        })
    }
}

impl Default for ScalarMse {
    fn default() -> Self {
        Self::new((-1.0, 1.0)).expect("valid")
    }
}

impl Objective for ScalarMse {
    fn name(&self) -> String {
        "scalar_mse".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        scalar_mse(x[0])
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0];
    }
    fn metadata(&self) -> &Metadata {
        &self.meta
    }
}

/// `sᵀx + offset`.
#[derive(Clone, Debug)]
pub struct Linear {
    slope: Vec<f64>,
    offset: f64,
    meta: Metadata,
}

impl Linear {
    pub fn new(slope: Vec<f64>, offset: f64) -> Result<Self> {
        if slope.is_empty() {
            return Err(Error::param("slope must be non-empty"));
        }
        let d = slope.len();
        Ok(Linear {
            meta: Metadata {
                lipschitz: Some(super::norm(&slope)),
                smoothness: Some(0.0),
                domain: vec![(-1.0, 1.0); d],
                minimizer: None,
                strong_convexity: None,
            },
            slope,
            offset,
        })
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self::new(vec![0.0; dim], value).expect("valid")
    }
}

impl Objective for Linear {
    fn name(&self) -> String {
        "linear".into()
    }
    fn dim(&self) -> usize {
        self.slope.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.offset + self.slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>()
    }
    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.slope);
    }
    fn metadata(&self) -> &Metadata {
        &self.meta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rastrigin_values() {
        assert_eq!(rastrigin1d(0.0), 0.0);
        assert_abs_diff_eq!(rastrigin1d(0.5), 20.25, epsilon = 1e-12);
        assert_abs_diff_eq!(rastrigin1d(1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dropwave_values() {
        assert_eq!(dropwave1d(0.0), -1.0);
        assert_abs_diff_eq!(dropwave1d(1.0 / 12.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dropwave1d(2.0), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn scalar_prototypes() {
        assert_eq!(scalar_ce(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(scalar_ce((-1.0f64).exp()).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(scalar_mse(0.0), 0.0);
        for bad in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(scalar_ce(bad), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn rastrigin_constants_on_default_box() {
        let r = Rastrigin::one_d();
        let m = r.metadata();
        assert_abs_diff_eq!(m.smoothness.unwrap(), 2.0 + 40.0 * PI * PI, epsilon = 1e-9);
        // bounded 1-D maximization of f' puts the peak at x ≈ 4.2508
        let lf = m.lipschitz.unwrap();
        assert_abs_diff_eq!(lf, 71.332_659_36, epsilon = 1e-6);
        let r3 = Rastrigin::new(3, Rastrigin::DEFAULT_DOMAIN).unwrap();
        assert_abs_diff_eq!(r3.metadata().lipschitz.unwrap(), 3f64.sqrt() * lf, epsilon = 1e-9);
    }

    #[test]
    fn dropwave_second_derivative_matches_differences() {
        let h = 1e-4;
        for &x in &[-1.3, -0.2, 0.0, 0.05, 0.7, 2.4] {
            let (_, f1p, _) = dropwave_parts(x + h);
            let (_, f1m, _) = dropwave_parts(x - h);
            let (_, _, f2) = dropwave_parts(x);
            let fd = (f1p - f1m) / (2.0 * h);
            assert!((fd - f2).abs() <= 1e-5 * (1.0 + f2.abs()), "x={x}: {fd} vs {f2}");
        }
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(Rastrigin::new(0, (-1.0, 1.0)).is_err());
        assert!(Rastrigin::new(1, (1.0, -1.0)).is_err());
        assert!(Quadratic::new(vec![1.0], vec![], (-1.0, 1.0)).is_err());
        assert!(Quadratic::new(vec![-1.0], vec![0.0], (-1.0, 1.0)).is_err());
        assert!(ScalarCe::new(0.0).is_err());
        assert!(Linear::new(vec![], 0.0).is_err());
    }

    #[test]
    fn quadratic_metadata() {
        let q = Quadratic::new(vec![2.0, 4.0], vec![0.5, 0.0], (-1.0, 1.0)).unwrap();
        let m = q.metadata();
        assert_eq!(m.smoothness, Some(4.0));
        assert_eq!(m.strong_convexity, Some(2.0));
        assert_abs_diff_eq!(m.lipschitz.unwrap(), (9.0f64 + 16.0).sqrt(), epsilon = 1e-12);
        assert_eq!(q.gradient(&[0.5, 1.0]), vec![0.0, 4.0]);
    }
}
