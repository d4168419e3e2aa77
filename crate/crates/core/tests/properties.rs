use std::sync::Arc;

use proptest::prelude::*;

use gradopt_core::graduated::{alpha0, h_constant};
use gradopt_core::metrics::{adaptive_sharpness, empirical_grad_variance, SharpnessMethod, SharpnessQuery};
use gradopt_core::noise::{sample, Family, NoiseDistribution};
use gradopt_core::objectives::{make_finite_sum, BatchSampling, Quadratic, Rastrigin};
use gradopt_core::optim::{degree_of_smoothing, sgd_run, Phase, Recording, Schedule};
use gradopt_core::rng::child_seed;
use gradopt_core::{GraduatedPlan, PlanInputs, PlanMode, Preset, StepsRule};

fn explicit_inputs(epsilon: f64, gamma: f64, sigma: f64, lf: f64, lg: f64, delta1: f64) -> PlanInputs {
    PlanInputs {
        epsilon,
        gamma,
        sigma,
        sigma_phases: None,
        lipschitz: lf,
        smoothness: lg,
        mode: PlanMode::Explicit { delta1, eta: 0.5 / lg.max(sigma) },
        steps_rule: StepsRule::FixedSteps(10),
        phase_override: None,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #[test]
    fn sampling_is_a_function_of_the_seed(seed in any::<u64>(), n in 1usize..200, std in 0.1f64..5.0) {
        let d = NoiseDistribution::new(Family::Gaussian { std }, 2).unwrap();
        let a = sample(&d, n, seed).unwrap();
        let b = sample(&d, n, seed).unwrap();
        prop_assert_eq!(a.as_slice(), b.as_slice());
        let c = sample(&d, n, seed.wrapping_add(1)).unwrap();
        prop_assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn child_seeds_do_not_collide(seed in any::<u64>()) {
        let mut v: Vec<u64> = (0..256).map(|i| child_seed(seed, i)).collect();
        v.sort_unstable();
        v.dedup();
        prop_assert_eq!(v.len(), 256);
    }

    #[test]
    fn smoothing_degree_scales(eta in 1e-4f64..1.0, b in 1u32..4096, c in 0.0f64..100.0, a in 0.1f64..10.0) {
        let b = b as f64;
        let d = degree_of_smoothing(eta, b, c).unwrap();
        prop_assert!(rel(d, eta * c / b.sqrt()) < 1e-12 || d == 0.0);
        let scaled = degree_of_smoothing(a * eta, b, c).unwrap();
        prop_assert!((scaled - a * d).abs() <= 1e-12 * (1.0 + a * d));
        let quartered = degree_of_smoothing(eta, 4.0 * b, c).unwrap();
        prop_assert!((2.0 * quartered - d).abs() <= 1e-12 * (1.0 + d));
    }

    #[test]
    fn explicit_ladder_is_geometric(
        epsilon in 0.01f64..0.5,
        gamma in 0.5f64..0.95,
        sigma in 0.1f64..4.0,
        lf in 0.0f64..10.0,
        lg in 0.5f64..10.0,
        delta1 in 0.05f64..2.0,
    ) {
        let Ok(plan) = GraduatedPlan::build(explicit_inputs(epsilon, gamma, sigma, lf, lg, delta1)) else {
            return Ok(());
        };
        let a0 = if lf > 0.0 { 1.0 / (16.0 * lf * delta1) } else { f64::INFINITY };
        let a0 = a0.min(1.0 / ((2.0 * sigma).sqrt() * delta1));
        prop_assert!(rel(plan.alpha0, a0) < 1e-12);
        let exact = (a0 * epsilon).ln() / gamma.ln();
        if (exact - exact.round()).abs() > 1e-6 {
            prop_assert_eq!(plan.m_theory as f64, exact.ceil());
        }
        prop_assert_eq!(plan.phases.len(), plan.m + 1);
        for p in &plan.phases {
            prop_assert!(rel(p.delta, delta1 * gamma.powi(p.m as i32 - 1)) < 1e-9);
        }
        let last = plan.phases.len() - 1;
        if last >= 1 {
            prop_assert_eq!(plan.phases[last].epsilon_m, plan.phases[last - 1].epsilon_m);
        }
        for p in &plan.phases[..plan.m.max(1)] {
            prop_assert!(rel(p.epsilon_m, sigma * p.delta * p.delta / 2.0) < 1e-12);
            prop_assert!(rel(p.h_m, h_constant(sigma, p.eta, p.delta, lf, lg)) < 1e-12);
        }
    }

    #[test]
    fn preset_ratio_matches_gamma(gamma in 0.5f64..0.999) {
        for preset in [Preset::LrDecay, Preset::BatchGrowth] {
            let (k, l) = preset.factors(gamma).unwrap();
            prop_assert!(rel(k / l.sqrt(), gamma) < 1e-12);
        }
        let custom = Preset::Custom { kappa: gamma, lambda: 2.0 };
        prop_assert!(custom.factors(gamma).is_err());
    }

    #[test]
    fn lr_decay_plan_tracks_delta(
        gamma in 0.5f64..0.95,
        eta1 in 1e-3f64..0.05,
        batch1 in 1usize..16,
        c in 20.0f64..200.0,
    ) {
        let inputs = PlanInputs {
            epsilon: 0.2,
            gamma,
            sigma: 1.0,
            sigma_phases: None,
            lipschitz: 10.0,
            smoothness: 1.0,
            mode: PlanMode::Implicit { eta1, batch1, c, preset: Preset::LrDecay },
            steps_rule: StepsRule::FixedSteps(5),
            phase_override: Some(4),
        };
        let plan = GraduatedPlan::build(inputs).unwrap();
        for p in &plan.phases {
            prop_assert_eq!(p.batch, batch1);
            let d = degree_of_smoothing(p.eta, p.batch as f64, c).unwrap();
            prop_assert!(rel(d, p.delta) < 1e-9);
            prop_assert!(rel(p.eta, eta1 * gamma.powi(p.m as i32 - 1)) < 1e-9);
        }
    }

    #[test]
    fn fixed_samples_gives_equal_work_per_phase(phases in 0usize..6, k in 1u64..50) {
        let gamma = 0.5;
        let s = 4u64.pow(phases as u32) * k;
        let inputs = PlanInputs {
            epsilon: 0.2,
            gamma,
            sigma: 1.0,
            sigma_phases: None,
            lipschitz: 1.0,
            smoothness: 1.0,
            mode: PlanMode::Implicit { eta1: 0.01, batch1: 1, c: 100.0, preset: Preset::BatchGrowth },
            steps_rule: StepsRule::FixedSamples(s),
            phase_override: Some(phases),
        };
        let plan = GraduatedPlan::build(inputs).unwrap();
        for p in &plan.phases {
            prop_assert_eq!(p.steps * p.batch as u64, s);
            prop_assert_eq!(p.batch as u64, 4u64.pow(p.m as u32 - 1));
        }
        prop_assert_eq!(plan.gradient_evaluations(), s * (phases as u64 + 1));
        prop_assert_eq!(plan.schedule().gradient_evaluations(), plan.gradient_evaluations());
    }

    #[test]
    fn schedule_bookkeeping(raw in prop::collection::vec((1e-4f64..1.0, 1usize..128, 1u64..1000), 1..8)) {
        let phases: Vec<Phase> = raw.iter().map(|&(eta, batch, steps)| Phase { eta, batch, steps }).collect();
        let s = Schedule::new(phases.clone()).unwrap();
        prop_assert_eq!(s.total_steps(), raw.iter().map(|r| r.2).sum::<u64>());
        prop_assert_eq!(s.gradient_evaluations(), raw.iter().map(|r| r.2 * r.1 as u64).sum::<u64>());
        prop_assert_eq!(s.kappa().len(), raw.len() - 1);
        let prod: f64 = s.kappa().iter().product();
        prop_assert!(rel(prod, raw[raw.len() - 1].0 / raw[0].0) < 1e-9);
        let lam: f64 = s.lambda().iter().product();
        prop_assert!(rel(lam, raw[raw.len() - 1].1 as f64 / raw[0].1 as f64) < 1e-9);
    }

    #[test]
    fn sharpness_grows_with_radius(w in prop::collection::vec(-3.0f64..3.0, 1..5), r1 in 0.01f64..1.0, f in 1.0f64..3.0) {
        let dim = w.len();
        let q = Quadratic::new(vec![1.5; dim], vec![0.0; dim], (-10.0, 10.0)).unwrap();
        let small = adaptive_sharpness(&q, &SharpnessQuery::new(w.clone(), r1), SharpnessMethod::CornerEnumeration).unwrap();
        let large = adaptive_sharpness(&q, &SharpnessQuery::new(w, r1 * f), SharpnessMethod::CornerEnumeration).unwrap();
        prop_assert!(small.value >= 0.0);
        prop_assert!(large.value >= small.value - 1e-12);
    }

    #[test]
    fn rastrigin_sharpness_grows_with_radius(w in -4.0f64..4.0, r1 in 0.01f64..1.0, f in 1.0f64..3.0) {
        let r = Rastrigin::one_d();
        let m = SharpnessMethod::Grid { points: 2001 };
        let small = adaptive_sharpness(&r, &SharpnessQuery::new(vec![w], r1), m).unwrap();
        let large = adaptive_sharpness(&r, &SharpnessQuery::new(vec![w], r1 * f), m).unwrap();
        prop_assert!(large.value >= small.value - 1e-9, "{} < {}", large.value, small.value);
    }

    #[test]
    fn sgd_is_reproducible(seed in any::<u64>(), x0 in -3.0f64..3.0) {
        let fs = make_finite_sum(Arc::new(Rastrigin::one_d()), 32, 5.0, 11).unwrap();
        let s = Schedule::new(vec![
            Phase { eta: 0.002, batch: 1, steps: 50 },
            Phase { eta: 0.002, batch: 4, steps: 20 },
        ]).unwrap();
        let a = sgd_run(&fs, &[x0], &s, BatchSampling::WithReplacement, seed, Recording::Every(1)).unwrap();
        let b = sgd_run(&fs, &[x0], &s, BatchSampling::WithReplacement, seed, Recording::Every(1)).unwrap();
        prop_assert_eq!(a.iterates_bytes(), b.iterates_bytes());
        prop_assert_eq!(a.rows.len(), b.rows.len());
    }
}

#[test]
fn gradient_variance_falls_with_batch_size() {
    let fs = make_finite_sum(Arc::new(Quadratic::square()), 64, 3.0, 5).unwrap();
    let c2 = fs.c2();
    let mut prev = f64::INFINITY;
    for (k, b) in [1usize, 2, 4, 8, 16, 32, 64].into_iter().enumerate() {
        let v = empirical_grad_variance(&fs, &[0.7], b, 40_000, 100 + k as u64).unwrap();
        assert!(v < prev, "b = {b}: {v} >= {prev}");
        assert!(rel(v, c2 / b as f64) < 0.05, "b = {b}: {v} vs {}", c2 / b as f64);
        prev = v;
    }
}

#[test]
fn without_replacement_full_batch_is_exact() {
    let fs = make_finite_sum(Arc::new(Quadratic::square()), 16, 2.0, 9).unwrap();
    let s = Schedule::constant(0.1, 16, 30).unwrap();
    let a = sgd_run(&fs, &[1.3], &s, BatchSampling::WithoutReplacement, 1, Recording::Endpoints).unwrap();
    let b = sgd_run(&fs, &[1.3], &s, BatchSampling::WithoutReplacement, 2, Recording::Endpoints).unwrap();
    assert!((a.final_x[0] - b.final_x[0]).abs() < 1e-12);
}

#[test]
fn alpha0_takes_the_smaller_term() {
    assert_eq!(alpha0(1.0, 2.0, 0.5), 1.0 / 8.0);
    assert_eq!(alpha0(0.01, 2.0, 0.5), 1.0);
    assert_eq!(alpha0(0.0, 0.5, 2.0), 0.5);
}

#[test]
fn gamma_outside_range_is_refused() {
    for gamma in [0.3, 0.49, 1.0, 1.2] {
        assert!(GraduatedPlan::build(explicit_inputs(0.1, gamma, 1.0, 1.0, 1.0, 0.5)).is_err(), "{gamma}");
    }
}
