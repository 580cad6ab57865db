//! Objective, gradient and adjoint throughput.
//!
//! Benchmark ids are the same with and without the `parallel` feature, so the
//! two builds can be compared through criterion baselines:
//!
//! ```text
//! cargo bench -p aao-core --no-default-features -- --save-baseline sequential
//! cargo bench -p aao-core -- --baseline sequential
//! ```
//!
//! With the feature enabled, the `threads` group additionally compares a
//! single-worker pool against the full pool inside one binary.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use aao_core::diagnostics::pairing_suite;
use aao_core::experiments::{prepare, ExperimentConfig, Prepared};
use aao_core::grid::Grid;
use aao_core::par;
use aao_core::solvers::Backend;

fn prepared(samples: usize) -> Prepared {
    let samples = [
        r#"{"u0": {"shape": "sine", "amplitude": 1.0, "mode": 1}, "phi": {"shape": "gaussian", "amplitude": 8, "center": 0.3, "width": 0.1}}"#,
        r#"{"u0": {"shape": "sine", "amplitude": 0.8, "mode": 1}, "phi": {"shape": "gaussian", "amplitude": 12, "center": 0.5, "width": 0.1}}"#,
        r#"{"u0": {"shape": "sine", "amplitude": 1.2, "mode": 1}, "phi": {"shape": "gaussian", "amplitude": 10, "center": 0.7, "width": 0.1}}"#,
    ][..samples]
        .join(",");
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "truth": {{"nonlinearity": "square", "samples": [{samples}], "estimate_source": true}},
            "measurement": {{"mode": "snapshots", "count": 6}},
            "noise": {{"kind": "sigma", "value": 0.01}},
            "solver": {{"method": "adam", "iters": 1}}
        }}"#
    ))
    .expect("bench config is valid");
    prepare(&cfg).expect("synthesis succeeds")
}

fn mode() -> &'static str {
    if par::is_parallel() {
        "rayon"
    } else {
        "sequential"
    }
}

fn objective_and_gradient(c: &mut Criterion) {
    println!("building with the {} core", mode());
    let mut g = c.benchmark_group("gradient");
    for k in [1, 3] {
        let prep = prepared(k);
        let (pr, s) = (&prep.problem, &prep.init);
        g.bench_with_input(BenchmarkId::new("evaluate", k), &k, |b, _| {
            b.iter(|| black_box(pr.evaluate(s).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("flat", k), &k, |b, _| {
            b.iter(|| black_box(pr.gradient(s, Backend::Flat).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("function_space", k), &k, |b, _| {
            b.iter(|| black_box(pr.gradient(s, Backend::FunctionSpace).unwrap()))
        });
    }
    g.finish();
}

fn adjoint_pairings(c: &mut Criterion) {
    let grid = Grid::standard();
    let mut g = c.benchmark_group("pairings");
    g.sample_size(10);
    g.bench_function("standard_grid", |b| {
        b.iter(|| black_box(pairing_suite(&grid, 1, 3).unwrap()))
    });
    g.finish();
}

fn thread_counts(c: &mut Criterion) {
    if !par::is_parallel() {
        return;
    }
    let prep = prepared(3);
    let (pr, s) = (&prep.problem, &prep.init);
    let full = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut g = c.benchmark_group("threads");
    let mut counts = vec![1, full];
    counts.dedup();
    for jobs in counts {
        g.bench_with_input(
            BenchmarkId::new("function_space", jobs),
            &jobs,
            |b, &jobs| {
                par::with_threads(jobs, || {
                    b.iter(|| black_box(pr.gradient(s, Backend::FunctionSpace).unwrap()))
                })
            },
        );
    }
    g.finish();
}

criterion_group!(
    benches,
    objective_and_gradient,
    adjoint_pairings,
    thread_counts
);
criterion_main!(benches);
