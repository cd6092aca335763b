use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ulps_core::eval::Prepared;
use ulps_core::positioning::{solve_position, toas_to_tdoas};
use ulps_core::{Method, Scenario};

fn prepared() -> Prepared {
    Scenario::uex_reflector().prepare().expect("bundled scenario is valid")
}

fn render(c: &mut Criterion) {
    let p = prepared();
    let mut trial = 0;
    c.bench_function("render_trial", |b| {
        b.iter(|| {
            trial += 1;
            black_box(p.render_trial(1, trial).unwrap())
        })
    });
}

fn correlate(c: &mut Criterion) {
    let p = prepared();
    let buffer = p.render_trial(1, 0).unwrap().buffer;
    c.bench_function("projections_5ch", |b| {
        b.iter(|| black_box(p.bank.projections(&buffer.samples)))
    });
}

fn mca(c: &mut Criterion) {
    let p = prepared();
    let buffer = p.render_trial(1, 0).unwrap().buffer;
    c.bench_function("run_mca_j32_m3", |b| {
        b.iter(|| black_box(p.run_mca(&buffer, &p.mca).unwrap()))
    });
    c.bench_function("estimate_classical", |b| {
        b.iter(|| black_box(p.estimate(&buffer, Method::Classical).unwrap()))
    });
}

fn solve(c: &mut Criterion) {
    let p = prepared();
    let s = &p.scenario;
    let buffer = p.render_trial(1, 0).unwrap().buffer;
    let toa = ulps_core::mca::select_los(&p.run_mca(&buffer, &p.mca).unwrap(), p.mca.gamma);
    let tdoas = toas_to_tdoas(&toa, &p.schedule, s.fs_rx, s.speed_of_sound).unwrap();
    let mut free = s.solver.clone();
    free.fixed_z = None;
    c.bench_function("solve_fixed_z", |b| {
        b.iter_batched(
            || tdoas.clone(),
            |t| solve_position(&t, &s.array, &s.solver).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("solve_free_3d", |b| {
        b.iter(|| black_box(solve_position(&tdoas, &s.array, &free).unwrap()))
    });
}

criterion_group!(benches, render, correlate, mca, solve);
criterion_main!(benches);
