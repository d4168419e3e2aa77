use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Metadata, Objective};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// How minibatch indices are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchSampling {
    /// i.i.d. uniform indices; variance is exactly `C²/b`.
    #[default]
    WithReplacement,
    /// Distinct indices; variance is `C²/b · (n − b)/(n − 1)` and `b = n`
    /// returns the full gradient.
    WithoutReplacement,
}

/// `f_i(x) = f(x) + a_iᵀx` for `i = 1..n` with `Σ a_i = 0`. Every component
/// gradient differs from `∇f(x)` by `a_i`, independently of `x`, so the
/// single-sample gradient variance is `(1/n) Σ ‖a_i‖²` everywhere.
#[derive(Clone)]
pub struct FiniteSum {
    base: Arc<dyn Objective>,
    n: usize,
    dim: usize,
    perturbations: Vec<f64>,
    c2: f64,
}

impl std::fmt::Debug for FiniteSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiniteSum")
            .field("base", &self.base.name())
            .field("n", &self.n)
            .field("dim", &self.dim)
            .field("c2", &self.c2)
            .finish()
    }
}

/// Random centered perturbations rescaled so that `(1/n) Σ ‖a_i‖² = spread²`.
pub fn make_finite_sum(base: Arc<dyn Objective>, n: usize, spread: f64, seed: u64) -> Result<FiniteSum> {
    if n < 2 {
        return Err(Error::param(format!("finite sum needs n >= 2, got {n}")));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::param(format!("spread must be finite and >= 0, got {spread}")));
    }
    let d = base.dim();
    if spread == 0.0 {
        return Ok(FiniteSum { base, n, dim: d, perturbations: vec![0.0; n * d], c2: 0.0 });
    }
    let mut rng = rng::from_seed(seed);
    let mut a: Vec<f64> = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for j in 0..d {
        let mean = (0..n).map(|i| a[i * d + j]).sum::<f64>() / n as f64;
        (0..n).for_each(|i| a[i * d + j] -= mean);
    }
    let msq = a.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if msq == 0.0 {
        return Err(Error::param("degenerate perturbation draw"));
    }
    let k = spread / msq.sqrt();
    a.iter_mut().for_each(|v| *v *= k);
    Ok(FiniteSum { base, n, dim: d, perturbations: a, c2: spread * spread })
}

impl FiniteSum {
    /// Uses the given perturbations after checking that they sum to zero.
    pub fn from_perturbations(base: Arc<dyn Objective>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = base.dim();
        if n < 2 {
            return Err(Error::param(format!("finite sum needs n >= 2, got {n}")));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::param(format!("every perturbation must have length {d}")));
        }
        let scale = rows.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for j in 0..d {
            let s: f64 = rows.iter().map(|r| r[j]).sum();
            if s.abs() > 1e-12 * scale * n as f64 {
                return Err(Error::param(format!("perturbations sum to {s} in coordinate {j}, expected 0")));
            }
        }
        let perturbations: Vec<f64> = rows.into_iter().flatten().collect();
        let c2 = perturbations.iter().map(|v| v * v).sum::<f64>() / n as f64;
        Ok(FiniteSum { base, n, dim: d, perturbations, c2 })
    }

    pub fn base(&self) -> &Arc<dyn Objective> {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `C² = (1/n) Σ ‖a_i‖²`.
    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn c(&self) -> f64 {
        self.c2.sqrt()
    }

    pub fn perturbation(&self, i: usize) -> &[f64] {
        &self.perturbations[i * self.dim..(i + 1) * self.dim]
    }

    pub fn perturbations(&self) -> impl Iterator<Item = &[f64]> {
        self.perturbations.chunks_exact(self.dim)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.base.value(x)
    }

    pub fn metadata(&self) -> &Metadata {
        self.base.metadata()
    }

    pub fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        self.base.value(x) + self.perturbation(i).iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }

    pub fn component_gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut g = self.base.gradient(x);
        g.iter_mut().zip(self.perturbation(i)).for_each(|(g, a)| *g += a);
        g
    }

    /// `(1/n) Σ f_i(x)`, which equals the base value up to rounding.
    pub fn mean_component_value(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| self.component_value(i, x)).sum::<f64>() / self.n as f64
    }

    pub fn check_batch(&self, b: usize) -> Result<()> {
        if b == 0 || b > self.n {
            return Err(Error::param(format!("batch size {b} must lie in [1, {}]", self.n)));
        }
        Ok(())
    }

    /// Mean of `b` component gradients at `x`, written into `out`.
    pub fn minibatch_gradient_into(
        &self,
        x: &[f64],
        b: usize,
        sampling: BatchSampling,
        rng: &mut Rng,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_batch(b)?;
        self.base.gradient_into(x, out);
        self.add_batch_noise(b, sampling, rng, out);
        Ok(())
    }

    /// Adds the mean of `b` sampled perturbations to `grad`, turning a full
    /// gradient into a minibatch gradient. `b` must lie in `[1, n]`.
    pub fn add_batch_noise(&self, b: usize, sampling: BatchSampling, rng: &mut Rng, grad: &mut [f64]) {
        debug_assert!(b >= 1 && b <= self.n);
        if self.c2 == 0.0 {
            return;
        }
        let d = self.dim;
        let inv_b = 1.0 / b as f64;
        match sampling {
            BatchSampling::WithReplacement => {
                if d == 1 {
                    let mut s = 0.0;
                    for _ in 0..b {
                        s += self.perturbations[rng.random_range(0..self.n)];
                    }
                    grad[0] += s * inv_b;
                } else {
                    let mut s = vec![0.0; d];
                    for _ in 0..b {
                        let i = rng.random_range(0..self.n);
                        s.iter_mut().zip(self.perturbation(i)).for_each(|(s, a)| *s += a);
                    }
                    grad.iter_mut().zip(&s).for_each(|(o, s)| *o += s * inv_b);
                }
            }
            BatchSampling::WithoutReplacement => {
                // a full pass sees every a_i once and they cancel
                if b == self.n {
                    return;
                }
                let mut s = vec![0.0; d];
                for i in index::sample(rng, self.n, b) {
                    s.iter_mut().zip(self.perturbation(i)).for_each(|(s, a)| *s += a);
                }
                grad.iter_mut().zip(&s).for_each(|(o, s)| *o += s * inv_b);
            }
        }
    }
}

/// One with-replacement minibatch gradient at `x`.
pub fn minibatch_grad(fs: &FiniteSum, x: &[f64], b: usize, seed: u64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; fs.dim()];
    let mut rng = rng::from_seed(seed);
    fs.minibatch_gradient_into(x, b, BatchSampling::WithReplacement, &mut rng, &mut out)?;
    Ok(out)
}
