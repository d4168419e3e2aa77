//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints exactly one PASS/FAIL line, then exits non-zero if any
//! check failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gradopt_core::graduated::{check_basin_containment, run_explicit, StepsRule};
use gradopt_core::metrics::{analyze_sweep, convergence_gap, empirical_grad_variance, sharpness_sweep, PNorm, SharpnessSweep};
use gradopt_core::noise::{
    classify_tail, empirical_tail_test, normalize_unit_expectation, normalize_unit_second_moment, sample,
    TailTestConfig,
};
use gradopt_core::objectives::{
    make_finite_sum, AnalyticFamily, AnalyticForm, BatchSampling, DropWave1d, Linear, Quadratic, Rastrigin,
    ScalarMse, SmoothedFamily,
};
use gradopt_core::optim::{gd_run, sgd_gd_equivalence, Recording};
use gradopt_core::smoothing::{linspace, mc_smooth_eval, smoothing_sweep};
use gradopt_core::{graduated, Family, GraduatedPlan, NoiseDistribution, Objective, PlanInputs, PlanMode, Preset};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rastrigin_slope(x: f64) -> f64 {
    2.0 * x + 20.0 * PI * (2.0 * PI * x).sin()
}

fn slope_fit(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn criterion_1() -> Outcome {
    let obj = ScalarMse::new((-2.0, 2.0)).unwrap();
    let dist = normalize_unit_second_moment(&NoiseDistribution::new(Family::Gaussian { std: 1.0 }, 1).unwrap(), 0, 0)
        .unwrap()
        .dist;
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    let mut k = 0;
    for &x in &[-1.0, -0.5, 0.0, 0.5, 1.0] {
        for &delta in &[0.1, 0.25, 0.5, 0.75, 1.0] {
            let est = mc_smooth_eval(&obj, &[x], delta, &dist, 1_000_000, 1000 + k).unwrap();
            let exact = x * x + delta * delta;
            let ratio = (est.value - exact).abs() / est.ci_half_width;
            worst = worst.max(ratio);
            if ratio > 4.0 {
                misses += 1;
            }
            k += 1;
        }
    }
    outcome(misses == 0, format!("{k} pairs, max |error|/CI = {worst:.3}"))
}

fn criterion_2() -> Outcome {
    let fs = make_finite_sum(Arc::new(Linear::constant(1, 0.0)), 1024, 1.0, 11).unwrap();
    let batches = [1usize, 2, 4, 8, 16, 32];
    let mut rel = Vec::new();
    let mut vars = Vec::new();
    for (k, &b) in batches.iter().enumerate() {
        let v = empirical_grad_variance(&fs, &[0.0], b, 200_000, 20 + k as u64).unwrap();
        rel.push((v * b as f64 / fs.c2() - 1.0).abs());
        vars.push(v);
    }
    let lx: Vec<f64> = batches.iter().map(|&b| (b as f64).ln()).collect();
    let ly: Vec<f64> = vars.iter().map(|v| v.ln()).collect();
    let slope = slope_fit(&lx, &ly);
    let max_rel = rel.iter().cloned().fold(0.0, f64::max);
    outcome(
        max_rel <= 0.05 && (slope + 1.0).abs() <= 0.05,
        format!("C2 = {}, max relative error {max_rel:.4}, log-log slope {slope:.4}", fs.c2()),
    )
}

fn criterion_3() -> Outcome {
    let base: Arc<dyn Objective> = Arc::new(Rastrigin::one_d());
    let fam = AnalyticFamily::new(AnalyticForm::Rastrigin, base);
    let mut settings = 0;
    let mut violations = 0;
    let mut tightest: f64 = 0.0;
    for &delta in &[0.55, 0.6, 0.7, 0.8, 1.0] {
        let f = fam.at(delta);
        let meta = f.metadata().clone();
        let sigma = meta.strong_convexity.expect("smoothed Rastrigin is strongly convex here");
        let (lf, lg) = (meta.lipschitz.unwrap(), meta.smoothness.unwrap());
        let x_star = meta.minimizer.clone().unwrap();
        let f_star = f.value(&x_star);
        let limit = (1.0 / sigma).min(2.0 / lg);
        for &frac in &[0.1, 0.3, 0.6, 0.95] {
            let eta = frac * limit;
            let x0 = [x_star[0] + 2.9 * delta];
            let tr = gd_run(f.as_ref(), &x0, eta, 10_000, Recording::Full).unwrap();
            let h = 9.0 * (1.0 - sigma * eta) * delta * delta / (2.0 * eta) + 3.0 * lf * delta / (eta * (2.0 - lg * eta));
            for row in convergence_gap(&tr, f_star, h).iter().filter(|r| r.t_count >= 10 && r.t_count <= 10_000) {
                if row.min_gap > row.bound {
                    violations += 1;
                }
                tightest = tightest.max(row.min_gap / row.bound);
            }
            settings += 1;
        }
    }
    outcome(violations == 0, format!("{settings} settings, {violations} violations, max gap/bound {tightest:.3e}"))
}

fn criterion_4() -> Outcome {
    let q: Arc<dyn Objective> = Arc::new(Quadratic::square());
    let fs = make_finite_sum(q.clone(), 512, 1.0, 5).unwrap();
    let rep = sgd_gd_equivalence(&fs, q.as_ref(), &[0.8], 0.05, 1, 1000, 100, 77).unwrap();
    // independent reference: x_{t+1} = (1 − 2η) x_t
    let mut ref_ok = true;
    let mut x: f64 = 0.8;
    for row in &rep.rows {
        ref_ok &= (row.reference[0] - x).abs() <= 1e-12;
        x *= 1.0 - 2.0 * 0.05;
    }
    outcome(
        ref_ok && rep.all_within(),
        format!("{}/{} steps within 4 SE, max deviation {:.3e}", rep.steps_within, rep.rows.len(), rep.max_deviation),
    )
}

/// Local maxima of raw Rastrigin either side of the origin, by bisection on
/// the derivative.
fn global_basin() -> (f64, f64) {
    let root = |mut a: f64, mut b: f64| {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if rastrigin_slope(a).signum() == rastrigin_slope(m).signum() {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    (root(-0.75, -0.25), root(0.25, 0.75))
}

struct EscapeRuns {
    plan: GraduatedPlan,
    family: AnalyticFamily,
    runs: Vec<graduated::ExplicitRun>,
    starts: Vec<f64>,
}

fn escape_runs() -> EscapeRuns {
    let base: Arc<dyn Objective> = Arc::new(Rastrigin::one_d());
    let family = AnalyticFamily::new(AnalyticForm::Rastrigin, base.clone());
    let delta1 = 0.7;
    let at1 = family.at(delta1);
    let meta = at1.metadata();
    let plan = GraduatedPlan::build(PlanInputs {
        epsilon: 0.05,
        gamma: FRAC_1_SQRT_2,
        sigma: meta.strong_convexity.unwrap(),
        sigma_phases: None,
        lipschitz: meta.lipschitz.unwrap(),
        smoothness: meta.smoothness.unwrap(),
        mode: PlanMode::Explicit { delta1, eta: 0.0025 },
        steps_rule: StepsRule::Theory,
        phase_override: None,
    })
    .unwrap();
    let starts = linspace(-2.0, 2.0, 100);
    let runs = starts
        .iter()
        .map(|&x| run_explicit(&plan, &family, &[x], Recording::Endpoints).unwrap())
        .collect();
    EscapeRuns { plan, family, runs, starts }
}

fn criterion_5(e: &EscapeRuns) -> Outcome {
    let in_ball = e.runs.iter().all(|r| r.start_in_ball == Some(true));
    let hits = e.runs.iter().filter(|r| r.x_final[0].abs() <= 0.05).count();
    let frac = hits as f64 / e.runs.len() as f64;
    let (lo, hi) = global_basin();
    let oracle = e.starts.iter().filter(|&&x| x > lo && x < hi).count() as f64 / e.starts.len() as f64;
    let raw = Rastrigin::one_d();
    let raw_hits = e
        .starts
        .iter()
        .filter(|&&x| gd_run(&raw, &[x], 0.0025, 20_000, Recording::Endpoints).unwrap().final_x[0].abs() < lo.abs())
        .count() as f64
        / e.starts.len() as f64;
    outcome(
        in_ball && frac >= 0.95 && raw_hits < 0.5 && raw_hits == oracle,
        format!(
            "M = {}, graduated {:.2}, plain GD {:.2} (basin oracle {:.2}, basin ({lo:.4}, {hi:.4}))",
            e.plan.m, frac, raw_hits, oracle
        ),
    )
}

fn criterion_6(e: &EscapeRuns) -> Outcome {
    let mut loose = 0;
    let mut tight = 0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    let factor = 2.0 / e.plan.gamma() - 1.0;
    for run in &e.runs {
        let rep = check_basin_containment(&e.plan, &run.boundaries, &e.family);
        skipped += rep.skipped.len();
        for row in &rep.rows {
            checked += 1;
            if !(row.distance < 3.0 * row.delta) {
                loose += 1;
            }
            if row.m >= 2 && !(row.distance <= factor * row.delta) {
                tight += 1;
            }
            worst = worst.max(row.distance / row.delta);
        }
    }
    outcome(
        loose == 0 && tight == 0 && skipped == 0,
        format!(
            "{checked} phase starts, {loose} outside 3 delta, {tight} outside {factor:.4} delta, max distance/delta {worst:.3e}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let eps = [0.2, 0.1, 0.05];
    let totals: Vec<f64> = eps
        .iter()
        .map(|&epsilon| {
            GraduatedPlan::build(PlanInputs {
                epsilon,
                gamma: FRAC_1_SQRT_2,
                sigma: 1.0,
                sigma_phases: None,
                lipschitz: 1.0,
                smoothness: 1.0,
                mode: PlanMode::Implicit { eta1: 0.1, batch1: 1, c: 1.0, preset: Preset::LrDecay },
                steps_rule: StepsRule::Theory,
                phase_override: None,
            })
            .unwrap()
            .total_steps() as f64
        })
        .collect();
    let lx: Vec<f64> = eps.iter().map(|e: &f64| e.ln()).collect();
    let ly: Vec<f64> = totals.iter().map(|t| t.ln()).collect();
    let slope = slope_fit(&lx, &ly);
    // c from the geometric mean of T ε²
    let c = (eps.iter().zip(&totals).map(|(e, t)| (t * e * e).ln()).sum::<f64>() / 3.0).exp();
    let within = eps.iter().zip(&totals).all(|(e, t)| {
        let r = t / (c / (e * e));
        (0.5..=2.0).contains(&r)
    });
    outcome(
        within && (slope + 2.0).abs() <= 0.3,
        format!("totals {totals:?}, slope {slope:.3}, c {c:.1}"),
    )
}

fn criterion_8() -> Outcome {
    const TAU: f64 = 0.1;
    let dists: Vec<NoiseDistribution> = Family::reference_set()
        .iter()
        .map(|f| normalize_unit_expectation(&NoiseDistribution::new(*f, 1).unwrap(), 100_000, 8).unwrap().dist)
        .collect();
    let grid: Vec<Vec<f64>> = linspace(-5.12, 5.12, 401).into_iter().map(|x| vec![x]).collect();
    let rows = smoothing_sweep(&Rastrigin::one_d(), 0.5, &dists, &grid, 100_000, 81).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, d) in dists.iter().enumerate() {
        let block = &rows[k * grid.len()..(k + 1) * grid.len()];
        let count = if d.is_light_tailed() {
            block.iter().filter(|r| r.ci <= TAU).count()
        } else {
            block.iter().filter(|r| r.ci >= 10.0 * TAU).count()
        };
        ok &= 2 * count > grid.len();
        parts.push(format!("{} {count}", d.name()));
    }
    let dw = smoothing_sweep(&DropWave1d::default(), 0.5, &dists, &grid, 100_000, 82).unwrap();
    let dw_ok = dw.iter().all(|r| r.estimate.is_finite() && (-1.05..=0.05).contains(&r.estimate));
    let dw_lo = dw.iter().map(|r| r.estimate).fold(f64::INFINITY, f64::min);
    let dw_hi = dw.iter().map(|r| r.estimate).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        ok && dw_ok && rows.len() == 2807,
        format!("tau {TAU}; points meeting the CI rule: {}; drop-wave range [{dw_lo:.3}, {dw_hi:.3}]", parts.join(", ")),
    )
}

fn criterion_9() -> Outcome {
    let fs = make_finite_sum(Arc::new(Rastrigin::one_d()), 1024, 150.0, 9).unwrap();
    let cfg = SharpnessSweep { steps: 20_000, rho: 0.5, p: PNorm::Inf, sampling: BatchSampling::WithReplacement };
    let batches: Vec<usize> = (0..8).map(|k| 1 << k).collect();
    let runs = sharpness_sweep(&fs, &[4.0], &[0.001, 0.002, 0.003, 0.004], &batches, 32, &cfg, 90).unwrap();
    let a = analyze_sweep(&runs).unwrap();
    outcome(
        a.spearman <= -0.8 && a.mid_best,
        format!("spearman {:.3}, mean final value by delta third {:.2} / {:.2} / {:.2}", a.spearman, a.bins[0], a.bins[1], a.bins[2]),
    )
}

fn criterion_10() -> Outcome {
    let cfg = TailTestConfig::default();
    let mut agree = 0;
    let mut total = 0;
    let mut wrong = Vec::new();
    for fam in Family::reference_set() {
        let dist = NoiseDistribution::new(fam, 1).unwrap();
        for seed in 0..3 {
            let s = sample(&dist, 100_000, 1000 + seed).unwrap();
            let emp = empirical_tail_test(s.as_slice(), &cfg).unwrap();
            total += 1;
            if emp.label == classify_tail(&fam).label {
                agree += 1;
            } else {
                wrong.push(format!("{}#{seed}", fam.name()));
            }
        }
    }
    outcome(agree == total, format!("{agree}/{total} agree {wrong:?}"))
}

fn criterion_11() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_gradopt");
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().unwrap();
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for name in ["smooth-sweep.toml", "graduated-batch-growth.toml", "equivalence.toml", "sharpness-sweep.toml"] {
        let first = tmp.path().join(format!("{name}.a"));
        let st = Command::new(bin)
            .args(["run", configs.join(name).to_str().unwrap(), "--out", first.to_str().unwrap()])
            .status()
            .unwrap();
        if !st.success() {
            return outcome(false, format!("{name}: first run exited with {st}"));
        }
        let second = tmp.path().join(format!("{name}.b"));
        let st = Command::new(bin)
            .args(["replay", first.join("manifest.json").to_str().unwrap(), "--out", second.to_str().unwrap()])
            .status()
            .unwrap();
        if !st.success() {
            return outcome(false, format!("{name}: replay exited with {st}"));
        }
        let mut csvs: Vec<_> = std::fs::read_dir(&first)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        csvs.sort();
        if csvs.is_empty() {
            return outcome(false, format!("{name}: no CSV written"));
        }
        for a in csvs {
            let b = second.join(a.file_name().unwrap());
            compared += 1;
            if std::fs::read(&a).unwrap() != std::fs::read(&b).unwrap_or_default() {
                mismatched.push(a.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
    }
    outcome(mismatched.is_empty(), format!("{compared} CSV files compared, mismatched {mismatched:?}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2}: {} ({:.1}s of {}s) {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            o.detail
        );
    };
    let secs = Duration::from_secs;
    report(1, secs(10), &mut criterion_1);
    report(2, secs(30), &mut criterion_2);
    report(3, secs(60), &mut criterion_3);
    report(4, secs(60), &mut criterion_4);
    let start = Instant::now();
    let escape = escape_runs();
    let escape_time = start.elapsed();
    report(5, secs(120), &mut || {
        let mut o = criterion_5(&escape);
        o.detail = format!("{} [runs took {:.1}s]", o.detail, escape_time.as_secs_f64());
        o.pass &= escape_time <= secs(120);
        o
    });
    report(6, secs(120), &mut || criterion_6(&escape));
    report(7, secs(10), &mut criterion_7);
    report(8, secs(120), &mut criterion_8);
    report(9, secs(300), &mut criterion_9);
    report(10, secs(30), &mut criterion_10);
    report(11, secs(300), &mut criterion_11);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
