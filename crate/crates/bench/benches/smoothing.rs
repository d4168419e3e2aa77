use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gradopt_core::metrics::{adaptive_sharpness, SharpnessMethod, SharpnessQuery};
use gradopt_core::noise::{sample, Family, NoiseDistribution};
use gradopt_core::objectives::{make_finite_sum, BatchSampling, Rastrigin};
use gradopt_core::optim::{sgd_run, Recording, Schedule};
use gradopt_core::smoothing::mc_smooth_eval_on_panel;

fn mc_eval(c: &mut Criterion) {
    let obj = Rastrigin::one_d();
    let dist = NoiseDistribution::new(Family::Gaussian { std: 1.0 }, 1).unwrap();
    let mut g = c.benchmark_group("mc_smooth_eval");
    for n in [1_000usize, 10_000, 100_000] {
        let panel = sample(&dist, n, 7).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &panel, |b, panel| {
            b.iter(|| mc_smooth_eval_on_panel(&obj, black_box(&[0.3]), 0.5, panel, "gaussian").unwrap())
        });
    }
    g.finish();
}

fn sgd(c: &mut Criterion) {
    let fs = make_finite_sum(Arc::new(Rastrigin::one_d()), 256, 175.0, 3).unwrap();
    let mut g = c.benchmark_group("sgd_run");
    for batch in [1usize, 16, 128] {
        let schedule = Schedule::constant(0.004, batch, 2_000).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(batch), &schedule, |b, s| {
            b.iter(|| sgd_run(&fs, black_box(&[2.0]), s, BatchSampling::WithReplacement, 11, Recording::Endpoints).unwrap())
        });
    }
    g.finish();
}

fn sharpness(c: &mut Criterion) {
    let r1 = Rastrigin::one_d();
    let r4 = Rastrigin::new(4, (-5.12, 5.12)).unwrap();
    c.bench_function("sharpness/grid_1d", |b| {
        let q = SharpnessQuery::new(vec![0.9], 0.5);
        b.iter(|| adaptive_sharpness(&r1, black_box(&q), SharpnessMethod::Grid { points: 2001 }).unwrap())
    });
    c.bench_function("sharpness/corners_4d", |b| {
        let q = SharpnessQuery::new(vec![0.9, -0.2, 1.1, 0.0], 0.5);
        b.iter(|| adaptive_sharpness(&r4, black_box(&q), SharpnessMethod::CornerEnumeration).unwrap())
    });
}

criterion_group!(benches, mc_eval, sgd, sharpness);
criterion_main!(benches);
