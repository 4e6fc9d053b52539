//! Sequential against parallel execution of independent Binder curves.
//!
//! Build with `--no-default-features` to bench the single-threaded fallback;
//! the `workers = 1` case runs the same path in the default build.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use noisy_ite::analysis::{run_curves, CurvePlan};
use noisy_ite::dmrg::DmrgOptions;
use noisy_ite::model::{Coupling, NoiseKind, NoiseRates};

fn plans() -> Vec<CurvePlan> {
    [4, 6, 8, 10]
        .into_iter()
        .map(|length| CurvePlan {
            coupling: Coupling::Ferro,
            kind: NoiseKind::BitFlip,
            rates: NoiseRates::Pauli { lambda: 0.1 },
            length,
            g_values: vec![0.9, 0.95, 1.0],
            options: DmrgOptions {
                chi_max: 16,
                energy_tol: 1e-8,
                ..Default::default()
            },
            staggered: false,
            warm_start: true,
        })
        .collect()
}

fn curves(c: &mut Criterion) {
    let plans = plans();
    let mut group = c.benchmark_group("binder_curves");
    group.sample_size(10);
    for workers in [1, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| black_box(run_curves(&plans, w)))
        });
    }
    group.finish();
}

criterion_group!(benches, curves);
criterion_main!(benches);
