//! Gradient descent, mini-batch SGD and phase schedules.

mod equivalence;

pub use equivalence::{sgd_gd_equivalence, EquivalenceReport, EquivalenceRow};

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{norm, BatchSampling, FiniteSum, Objective};
use crate::rng;

/// `|f|` or `‖x‖` beyond this counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// `δ = ηC/√b`.
pub fn degree_of_smoothing(eta: f64, batch: f64, c: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::param(format!("learning rate must be finite and > 0, got {eta}")));
    }
    if !(batch >= 1.0 && batch.is_finite()) {
        return Err(Error::param(format!("batch size must be >= 1, got {batch}")));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::param(format!("C must be finite and >= 0, got {c}")));
    }
    Ok(eta * c / batch.sqrt())
}

/// One constant-hyperparameter stretch of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub eta: f64,
    pub batch: usize,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    phases: Vec<Phase>,
}

impl Schedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::param("schedule has no phases"));
        }
        for (m, p) in phases.iter().enumerate() {
            if !(p.eta > 0.0 && p.eta.is_finite()) {
                return Err(Error::param(format!("phase {}: learning rate must be > 0, got {}", m + 1, p.eta)));
            }
            if p.batch == 0 {
                return Err(Error::param(format!("phase {}: batch size must be >= 1", m + 1)));
            }
            if p.steps == 0 {
                return Err(Error::param(format!("phase {}: step count must be >= 1", m + 1)));
            }
        }
        Ok(Schedule { phases })
    }

    pub fn constant(eta: f64, batch: usize, steps: u64) -> Result<Self> {
        Self::new(vec![Phase { eta, batch, steps }])
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    /// `κ_m = η_{m+1}/η_m` at each phase boundary.
    pub fn kappa(&self) -> Vec<f64> {
        self.phases.windows(2).map(|w| w[1].eta / w[0].eta).collect()
    }

    /// `λ_m = b_{m+1}/b_m` at each phase boundary.
    pub fn lambda(&self) -> Vec<f64> {
        self.phases.windows(2).map(|w| w[1].batch as f64 / w[0].batch as f64).collect()
    }

    pub fn total_steps(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// `Σ T_m b_m`.
    pub fn gradient_evaluations(&self) -> u64 {
        self.phases.iter().map(|p| p.steps * p.batch as u64).sum()
    }

    pub fn max_batch(&self) -> usize {
        self.phases.iter().map(|p| p.batch).max().unwrap_or(1)
    }
}

/// Which iterations keep a trace row. The final state is always kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recording {
    #[default]
    Full,
    /// Every `k`-th global step.
    Every(u64),
    /// First iterate of every phase.
    Endpoints,
}

impl Recording {
    fn wants(&self, t: u64, phase_start: u64) -> bool {
        match *self {
            Recording::Full => true,
            Recording::Every(k) => k > 0 && t.is_multiple_of(k),
            Recording::Endpoints => t == phase_start,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    /// 1-based phase whose step is taken from this iterate.
    pub phase: usize,
    pub eta: f64,
    pub batch: usize,
    pub delta: f64,
    pub value: f64,
    /// Norm of the full (not stochastic) gradient.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestIterate {
    pub t: u64,
    pub value: f64,
    pub x: Vec<f64>,
}

/// Record of one run. `rows[i]` describes the iterate `iterate(i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub dim: usize,
    pub rows: Vec<TraceRow>,
    iterates: Vec<f64>,
    pub final_x: Vec<f64>,
    pub final_value: f64,
    /// Steps taken, counting those skipped at a fixed point.
    pub steps: u64,
    pub best: BestIterate,
    pub seed: Option<u64>,
    pub wall_time_secs: f64,
    /// Step at which a deterministic run hit `x_{t+1} = x_t` exactly; the
    /// rest of that phase is then skipped.
    pub fixed_point_at: Option<u64>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iterate(&self, i: usize) -> &[f64] {
        &self.iterates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iterates(&self) -> impl Iterator<Item = &[f64]> {
        self.iterates.chunks_exact(self.dim)
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }

    /// Little-endian `f64` dump of all recorded iterates, row-major.
    pub fn iterates_bytes(&self) -> Vec<u8> {
        self.iterates.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// A failed run together with the trace recorded before the failure.
#[derive(Clone, Debug)]
pub struct RunError {
    pub error: Error,
    pub prefix: RunTrace,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} rows recorded)", self.error, self.prefix.rows.len())
    }
}

impl std::error::Error for RunError {}

impl From<RunError> for Error {
    fn from(e: RunError) -> Self {
        e.error
    }
}

/// Hyperparameters of a phase as seen by the loop.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PhaseSpec {
    pub eta: f64,
    pub batch: usize,
    pub steps: u64,
    pub delta: f64,
    pub label: usize,
}

/// Value / gradient source for [`drive`].
pub(crate) trait Oracle {
    fn value(&self, x: &[f64]) -> f64;
    fn full_gradient(&self, x: &[f64], out: &mut [f64]);
    /// Turns the full gradient into the step direction.
    fn perturb(&mut self, _phase: &PhaseSpec, _g: &mut [f64]) {}
    fn deterministic(&self) -> bool {
        true
    }
}

struct Plain<'a>(&'a dyn Objective);

impl Oracle for Plain<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn full_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.0.gradient_into(x, out)
    }
}

struct Stochastic<'a> {
    fs: &'a FiniteSum,
    sampling: BatchSampling,
    rng: rng::Rng,
}

impl Oracle for Stochastic<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.fs.value(x)
    }
    fn full_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.fs.base().gradient_into(x, out)
    }
    fn perturb(&mut self, phase: &PhaseSpec, g: &mut [f64]) {
        self.fs.add_batch_noise(phase.batch, self.sampling, &mut self.rng, g)
    }
    fn deterministic(&self) -> bool {
        self.fs.c2() == 0.0
    }
}

struct Recorder {
    dim: usize,
    rows: Vec<TraceRow>,
    iterates: Vec<f64>,
    best: BestIterate,
}

impl Recorder {
    fn push(&mut self, row: TraceRow, x: &[f64]) {
        self.rows.push(row);
        self.iterates.extend_from_slice(x);
    }

    fn observe(&mut self, t: u64, value: f64, x: &[f64]) {
        if value < self.best.value {
            self.best = BestIterate { t, value, x: x.to_vec() };
        }
    }
}

fn divergence(value: f64, x: &[f64], g: &[f64]) -> Option<String> {
    if !value.is_finite() {
        return Some(format!("objective value {value}"));
    }
    if value.abs() > DIVERGENCE_LIMIT {
        return Some(format!("|f| = {:e} exceeds {DIVERGENCE_LIMIT:e}", value.abs()));
    }
    let xn = norm(x);
    if !xn.is_finite() || xn > DIVERGENCE_LIMIT {
        return Some(format!("‖x‖ = {xn:e} exceeds {DIVERGENCE_LIMIT:e}"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Some("non-finite gradient".into());
    }
    None
}

/// Runs `x ← x − η g` through `phases`, starting the global counter at `t0`.
pub(crate) fn drive(
    oracle: &mut dyn Oracle,
    x0: &[f64],
    phases: &[PhaseSpec],
    t0: u64,
    recording: Recording,
    seed: Option<u64>,
) -> std::result::Result<RunTrace, RunError> {
    let started = Instant::now();
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; dim];
    let mut rec = Recorder {
        dim,
        rows: Vec::new(),
        iterates: Vec::new(),
        best: BestIterate { t: t0, value: f64::INFINITY, x: x.clone() },
    };
    let mut t = t0;
    let mut fixed_point_at = None;
    let deterministic = oracle.deterministic();

    let finish = |rec: Recorder, x: Vec<f64>, value: f64, t: u64, fixed: Option<u64>| RunTrace {
        dim: rec.dim,
        rows: rec.rows,
        iterates: rec.iterates,
        final_x: x,
        final_value: value,
        steps: t - t0,
        best: rec.best,
        seed,
        wall_time_secs: started.elapsed().as_secs_f64(),
        fixed_point_at: fixed,
    };

    for ph in phases {
        let start = t;
        let end = start + ph.steps;
        while t < end {
            let value = oracle.value(&x);
            oracle.full_gradient(&x, &mut g);
            let row = TraceRow {
                t,
                phase: ph.label,
                eta: ph.eta,
                batch: ph.batch,
                delta: ph.delta,
                value,
                grad_norm: norm(&g),
            };
            if let Some(reason) = divergence(value, &x, &g) {
                rec.push(row, &x);
                let error = Error::Diverged { step: t, phase: ph.label, reason };
                return Err(RunError { error, prefix: finish(rec, x, value, t, fixed_point_at) });
            }
            if recording.wants(t, start) {
                rec.push(row, &x);
            }
            rec.observe(t, value, &x);
            oracle.perturb(ph, &mut g);
            let mut moved = false;
            for (xi, gi) in x.iter_mut().zip(&g) {
                let next = *xi - ph.eta * gi;
                moved |= next != *xi;
                *xi = next;
            }
            t += 1;
            if deterministic && !moved {
                // every remaining step of this phase repeats the same state
                fixed_point_at.get_or_insert(t - 1);
                let value = oracle.value(&x);
                if recording != Recording::Endpoints {
                    while t < end {
                        if recording.wants(t, start) {
                            rec.push(TraceRow { t, ..row }, &x);
                        }
                        t += 1;
                    }
                }
                t = end;
                rec.observe(t, value, &x);
            }
        }
    }
    let last = phases.last().expect("at least one phase");
    let value = oracle.value(&x);
    oracle.full_gradient(&x, &mut g);
    let row =
        TraceRow { t, phase: last.label, eta: last.eta, batch: last.batch, delta: last.delta, value, grad_norm: norm(&g) };
    rec.push(row, &x);
    if let Some(reason) = divergence(value, &x, &g) {
        let error = Error::Diverged { step: t, phase: last.label, reason };
        return Err(RunError { error, prefix: finish(rec, x, value, t, fixed_point_at) });
    }
    rec.observe(t, value, &x);
    Ok(finish(rec, x, value, t, fixed_point_at))
}

fn check_start(obj_dim: usize, x0: &[f64]) -> Result<()> {
    if x0.len() != obj_dim {
        return Err(Error::param(format!("start point has dimension {}, objective {obj_dim}", x0.len())));
    }
    Ok(())
}

pub(crate) fn bad_input(error: Error, dim: usize) -> RunError {
    RunError {
        error,
        prefix: RunTrace {
            dim,
            rows: vec![],
            iterates: vec![],
            final_x: vec![],
            final_value: f64::NAN,
            steps: 0,
            best: BestIterate { t: 0, value: f64::NAN, x: vec![] },
            seed: None,
            wall_time_secs: 0.0,
            fixed_point_at: None,
        },
    }
}

/// `T` steps of `x ← x − η∇f(x)`.
pub fn gd_run(
    obj: &dyn Objective,
    x0: &[f64],
    eta: f64,
    steps: u64,
    recording: Recording,
) -> std::result::Result<RunTrace, RunError> {
    gd_phase(obj, x0, eta, steps, 1, 0.0, 0, recording)
}

/// [`gd_run`] with explicit phase label, recorded `δ` and starting counter.
#[allow(clippy::too_many_arguments)]
pub fn gd_phase(
    obj: &dyn Objective,
    x0: &[f64],
    eta: f64,
    steps: u64,
    phase: usize,
    delta: f64,
    t0: u64,
    recording: Recording,
) -> std::result::Result<RunTrace, RunError> {
    let schedule = Schedule::constant(eta, 1, steps).map_err(|e| bad_input(e, x0.len()))?;
    check_start(obj.dim(), x0).map_err(|e| bad_input(e, x0.len()))?;
    let p = schedule.phases()[0];
    let spec = PhaseSpec { eta: p.eta, batch: 1, steps: p.steps, delta, label: phase };
    drive(&mut Plain(obj), x0, &[spec], t0, recording, None)
}

/// Gradient descent following the learning rates and step counts of
/// `schedule` (batch sizes are ignored; `δ` is recorded as zero).
pub fn gd_schedule(
    obj: &dyn Objective,
    x0: &[f64],
    schedule: &Schedule,
    recording: Recording,
) -> std::result::Result<RunTrace, RunError> {
    check_start(obj.dim(), x0).map_err(|e| bad_input(e, x0.len()))?;
    let specs: Vec<PhaseSpec> = schedule
        .phases()
        .iter()
        .enumerate()
        .map(|(m, p)| PhaseSpec { eta: p.eta, batch: p.batch, steps: p.steps, delta: 0.0, label: m + 1 })
        .collect();
    drive(&mut Plain(obj), x0, &specs, 0, recording, None)
}

/// Mini-batch SGD on a finite sum. Recorded `δ_t = η_m C/√b_m`.
pub fn sgd_run(
    fs: &FiniteSum,
    x0: &[f64],
    schedule: &Schedule,
    sampling: BatchSampling,
    seed: u64,
    recording: Recording,
) -> std::result::Result<RunTrace, RunError> {
    let dim = x0.len();
    check_start(fs.dim(), x0).map_err(|e| bad_input(e, dim))?;
    let mut specs = Vec::with_capacity(schedule.phases().len());
    for (m, p) in schedule.phases().iter().enumerate() {
        fs.check_batch(p.batch).map_err(|e| bad_input(e, dim))?;
        let delta = degree_of_smoothing(p.eta, p.batch as f64, fs.c()).map_err(|e| bad_input(e, dim))?;
        specs.push(PhaseSpec { eta: p.eta, batch: p.batch, steps: p.steps, delta, label: m + 1 });
    }
    let mut oracle = Stochastic { fs, sampling, rng: rng::from_seed(seed) };
    drive(&mut oracle, x0, &specs, 0, recording, Some(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_finite_sum, Quadratic, Rastrigin};
    use std::sync::Arc;

    #[test]
    fn quadratic_gd_examples() {
        let q = Quadratic::square();
        let tr = gd_run(&q, &[1.0], 0.25, 1, Recording::Full).unwrap();
        assert_eq!(tr.final_x, vec![0.5]);
        let tr = gd_run(&q, &[1.0], 0.25, 20, Recording::Full).unwrap();
        assert_eq!(tr.final_x, vec![0.5f64.powi(20)]);
        assert_eq!(tr.len(), 21);
        assert_eq!(tr.iterate(3), &[0.125]);
        let err = gd_run(&q, &[1.0], 1.5, 50, Recording::Full).unwrap_err();
        match err.error {
            Error::Diverged { step, phase, .. } => {
                assert!(step <= 50);
                assert_eq!(phase, 1);
            }
            e => panic!("{e:?}"),
        }
        assert!(!err.prefix.rows.is_empty());
    }

    #[test]
    fn smoothing_degree() {
        assert_eq!(degree_of_smoothing(0.1, 256.0, 16.0).unwrap(), 0.1);
        let d = degree_of_smoothing(0.1, 1024.0, 1280f64.sqrt()).unwrap();
        assert!((d - 0.111_803_398_874_989_5).abs() < 1e-15);
        assert_eq!(degree_of_smoothing(0.1, 4.0, 0.0).unwrap(), 0.0);
        assert!(degree_of_smoothing(0.0, 4.0, 1.0).is_err());
        assert!(degree_of_smoothing(0.1, 0.5, 1.0).is_err());
    }

    #[test]
    fn fixed_point_short_circuit() {
        let q = Quadratic::square();
        let tr = gd_run(&q, &[1.0], 0.25, 1_000_000_000, Recording::Endpoints).unwrap();
        // the contraction stalls once the update rounds away in the subnormals
        assert!(tr.final_x[0].abs() < 1e-300);
        assert_eq!(tr.steps, 1_000_000_000);
        assert!(tr.fixed_point_at.is_some());
        assert_eq!(tr.rows.last().unwrap().t, 1_000_000_000);
        // full recording keeps one row per step even past the fixed point
        let full = gd_run(&q, &[1.0], 0.25, 2000, Recording::Full).unwrap();
        assert_eq!(full.len(), 2001);
        assert_eq!(full.rows[1500].t, 1500);
    }

    #[test]
    fn zero_spread_sgd_matches_gd() {
        let base: Arc<dyn Objective> = Arc::new(Rastrigin::one_d());
        let fs = make_finite_sum(base.clone(), 16, 0.0, 1).unwrap();
        let sched = Schedule::new(vec![
            Phase { eta: 0.001, batch: 1, steps: 50 },
            Phase { eta: 0.0005, batch: 4, steps: 70 },
        ])
        .unwrap();
        let s = sgd_run(&fs, &[1.3], &sched, BatchSampling::WithReplacement, 7, Recording::Full).unwrap();
        let g = gd_schedule(base.as_ref(), &[1.3], &sched, Recording::Full).unwrap();
        assert_eq!(s.final_x, g.final_x);
        assert_eq!(s.values(), g.values());
        assert!(s.rows.iter().all(|r| r.delta == 0.0));
    }

    #[test]
    fn full_batch_without_replacement_is_gd() {
        let q: Arc<dyn Objective> = Arc::new(Quadratic::square());
        let fs = make_finite_sum(q.clone(), 2, 1.0, 1).unwrap();
        let sched = Schedule::constant(0.1, 2, 30).unwrap();
        let s = sgd_run(&fs, &[0.9], &sched, BatchSampling::WithoutReplacement, 3, Recording::Full).unwrap();
        let g = gd_run(q.as_ref(), &[0.9], 0.1, 30, Recording::Full).unwrap();
        assert_eq!(s.final_x, g.final_x);
    }

    #[test]
    fn delta_tracks_schedule() {
        let q: Arc<dyn Objective> = Arc::new(Quadratic::square());
        let fs = make_finite_sum(q, 64, 2.0, 1).unwrap();
        let sched = Schedule::new(vec![
            Phase { eta: 0.1, batch: 4, steps: 10 },
            Phase { eta: 0.1, batch: 16, steps: 10 },
        ])
        .unwrap();
        let tr = sgd_run(&fs, &[0.5], &sched, BatchSampling::WithReplacement, 0, Recording::Full).unwrap();
        for r in &tr.rows {
            assert_eq!(r.delta, degree_of_smoothing(r.eta, r.batch as f64, 2.0).unwrap());
        }
        assert_eq!(tr.rows[9].phase, 1);
        assert_eq!(tr.rows[10].phase, 2);
        assert_eq!(sched.lambda(), vec![4.0]);
        assert_eq!(sched.gradient_evaluations(), 200);
        let too_big = Schedule::constant(0.1, 65, 1).unwrap();
        assert!(sgd_run(&fs, &[0.5], &too_big, BatchSampling::WithReplacement, 0, Recording::Full).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(vec![]).is_err());
        assert!(Schedule::constant(-0.1, 1, 1).is_err());
        assert!(Schedule::constant(0.1, 0, 1).is_err());
        assert!(Schedule::constant(0.1, 1, 0).is_err());
    }

    #[test]
    fn sgd_is_reproducible() {
        let base: Arc<dyn Objective> = Arc::new(Rastrigin::one_d());
        let fs = make_finite_sum(base, 128, 5.0, 2).unwrap();
        let sched = Schedule::constant(0.002, 2, 500).unwrap();
        let a = sgd_run(&fs, &[2.0], &sched, BatchSampling::WithReplacement, 11, Recording::Full).unwrap();
        let b = sgd_run(&fs, &[2.0], &sched, BatchSampling::WithReplacement, 11, Recording::Full).unwrap();
        let c = sgd_run(&fs, &[2.0], &sched, BatchSampling::WithReplacement, 12, Recording::Full).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.final_x, c.final_x);
    }

    #[test]
    fn best_iterate_tracks_minimum() {
        let q = Quadratic::square();
        let tr = gd_run(&q, &[1.0], 0.9, 10, Recording::Every(3)).unwrap();
        // oscillating contraction: |x| shrinks every step, so the last is best
        assert_eq!(tr.best.t, 10);
        assert_eq!(tr.rows.iter().map(|r| r.t).collect::<Vec<_>>(), vec![0, 3, 6, 9, 10]);
    }
}
