//! Sequential vs rayon execution of the three data-parallel hot spots.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polyq_core::billiard::lemma1_functional;
use polyq_core::ergodicity::{measure_series, BasisPolicy};
use polyq_core::mesh;
use polyq_core::observable::ObservableSpec;
use polyq_core::polygon::builtin;
use polyq_core::spectral::{assemble, solve_lowest, EigenOptions};
use polyq_core::{Exec, Observable};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench(c: &mut Criterion) {
    let sq = builtin("square").unwrap();
    let cos = Observable::new(ObservableSpec::parse("cos:1:0").unwrap(), &sq).unwrap();
    let disk = Observable::new(ObservableSpec::parse("region:disk:0.4:0.55:0.2").unwrap(), &sq).unwrap();
    let m = mesh::triangulate(&sq, 1.0 / 48.0).unwrap();
    let sys = assemble(&m).unwrap();
    let spectrum = solve_lowest(&sys, 60, &EigenOptions::default()).unwrap();

    let mut g = c.benchmark_group("time_average_T100_2000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| lemma1_functional(&sq, &cos, 100.0, 2000, 1, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("measure_disk_60_modes");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| measure_series(&spectrum, &disk, BasisPolicy::default(), exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("solve_60_modes");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = EigenOptions { exec, ..EigenOptions::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| solve_lowest(&sys, 60, opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
