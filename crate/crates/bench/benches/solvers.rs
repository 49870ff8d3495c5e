use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fieldvb::factors::ModalOperator;
use fieldvb::forward::{assemble_forward_stack, NoiseSpec};
use fieldvb::sequential::{default_map_step_size, map_gradient_descent};
use fieldvb::vb_gaussian::{GaussianHyper, GaussianVb};
use fieldvb::vb_laplace::{LaplaceHyper, LaplaceVb};
use fieldvb_bench::{fixture, problem};

fn forward_assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble_forward_stack");
    for n in [200, 600] {
        let p = problem(n, 40).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| {
            b.iter(|| assemble_forward_stack(black_box(p)).unwrap())
        });
    }
    group.finish();
}

fn gaussian_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("gaussian_sweep");
    for n in [200, 600] {
        let f = fixture(n, 100, NoiseSpec::Gaussian { sigma: 1e-3 }).unwrap();
        let op = ModalOperator::new(&f.stack, f.prior.eigsys()).unwrap();
        let engine = GaussianVb::new(&op, &f.data, &f.prior, GaussianHyper::default()).unwrap();
        let state = engine.initial_state().unwrap();
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| {
                let mut s = state.clone();
                engine.sweep(&mut s).unwrap();
                s
            })
        });
    }
    group.finish();
}

fn laplace_sweep(c: &mut Criterion) {
    let f = fixture(
        600,
        100,
        NoiseSpec::Impulsive {
            rate: 0.5,
            magnitude: 0.1,
        },
    )
    .unwrap();
    let op = ModalOperator::new(&f.stack, f.prior.eigsys()).unwrap();
    let engine = LaplaceVb::new(&op, &f.data, &f.prior, LaplaceHyper::default()).unwrap();
    let state = engine.initial_state().unwrap();
    c.bench_function("laplace_sweep/600", |b| {
        b.iter(|| {
            let mut s = state.clone();
            engine.sweep(&mut s).unwrap();
            s
        })
    });
}

fn map_descent(c: &mut Criterion) {
    let f = fixture(600, 1, NoiseSpec::Gaussian { sigma: 1e-3 }).unwrap();
    let u0 = f.prior.u0().clone();
    let step = default_map_step_size(&f.stack, &f.prior, 5.0, 1e6).unwrap();
    c.bench_function("map_gradient_descent/600x50", |b| {
        b.iter(|| map_gradient_descent(&u0, &f.stack, &f.data, &u0, 5.0, 1e6, &f.prior, 50, Some(step)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward_assembly, gaussian_sweep, laplace_sweep, map_descent
}
criterion_main!(benches);
