//! Parallel against sequential evaluation on the three heavy workloads.
//!
//! Each group has a `seq` line (plain loop) and a `par` line (the library's
//! own path, rayon unless built with `--no-default-features`).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use heavyq_core::correction::Analysis;
use heavyq_core::heavytail::abate_whitt;
use heavyq_core::oracle::{simulate, simulate_replications, SimConfig};
use heavyq_core::par;
use heavyq_core::perturbation::Variant;

#[path = "../tests/common/mod.rs"]
mod common;
use common::*;

fn mode() -> &'static str {
    if par::is_parallel() {
        "par"
    } else {
        "par-disabled"
    }
}

fn grid_over_t(c: &mut Criterion) {
    let a = Analysis::new(&mmpp5(), &exp_service(), abate_whitt(KAPPA).unwrap()).unwrap();
    let grid: Vec<f64> = (0..200).map(|i| 0.25 * i as f64).collect();
    let mut g = c.benchmark_group("grid_over_t");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("seq", grid.len()), |b| {
        b.iter(|| {
            for t in &grid {
                a.approximate(EPS, std::slice::from_ref(t), Variant::Replace, false).unwrap();
            }
        })
    });
    g.bench_function(BenchmarkId::new(mode(), grid.len()), |b| {
        b.iter(|| a.approximate(EPS, &grid, Variant::Replace, false).unwrap())
    });
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let m = mmpp2();
    let ht = abate_whitt(KAPPA).unwrap();
    let grid = [1.0, 10.0, 100.0];
    let (n, reps) = (400_000, 8);
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("seq", reps), |b| {
        b.iter(|| {
            for r in 0..reps {
                simulate(&m, &exp_service(), ht.as_ref(), EPS, &grid, SimConfig::new(n / reps, r as u64)).unwrap();
            }
        })
    });
    g.bench_function(BenchmarkId::new(mode(), reps), |b| {
        b.iter(|| {
            simulate_replications(&m, &exp_service(), ht.as_ref(), EPS, &grid, SimConfig::new(n, 0), reps).unwrap()
        })
    });
    g.finish();
}

fn model_sweep(c: &mut Criterion) {
    let mut r = rng(3);
    let systems: Vec<_> = (0..16).map(|i| random_system(&mut r, 2 + i % 3)).collect();
    let ht = abate_whitt(KAPPA).unwrap();
    let grid: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let run = |k: usize| {
        let (m, pt) = &systems[k];
        Analysis::new(m, pt, ht.clone()).and_then(|a| a.approximate(EPS, &grid, Variant::Replace, true)).is_ok()
    };
    let mut g = c.benchmark_group("model_sweep");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("seq", systems.len()), |b| b.iter(|| (0..systems.len()).map(run).count()));
    g.bench_function(BenchmarkId::new(mode(), systems.len()), |b| {
        b.iter(|| par::map_range(systems.len(), run).len())
    });
    g.finish();
}

criterion_group!(benches, grid_over_t, monte_carlo, model_sweep);
criterion_main!(benches);
