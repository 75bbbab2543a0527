//! Exact and Monte-Carlo revenue evaluation with and without the rayon pool.

use ccepe_core::harness::instances::fuzz_profile;
use ccepe_core::mechanisms::{exact_revenue_on, monte_carlo_revenue_on};
use ccepe_core::par::Parallelism;
use ccepe_core::seeds::rng_from_seed;
use ccepe_core::{ConsensusParams, Environment, MechanismKind, SetSystemRealization};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> Vec<(&'static str, Parallelism)> {
    #[allow(unused_mut)]
    let mut m = vec![("sequential", Parallelism::Sequential)];
    #[cfg(feature = "parallel")]
    m.push(("rayon", Parallelism::Rayon));
    m
}

fn exact(c: &mut Criterion) {
    let params = ConsensusParams::reference();
    let mut rng = rng_from_seed(7);
    let v = fuzz_profile(120, &mut rng);
    let support = Environment::digital_goods(120)
        .unwrap()
        .exact_support()
        .unwrap();
    let mut g = c.benchmark_group("exact_ccepe_dg120");
    for (name, par) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| {
                exact_revenue_on(MechanismKind::Ccepe, black_box(&v), &support, &params, par)
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let params = ConsensusParams::reference();
    let mut rng = rng_from_seed(8);
    let v = fuzz_profile(6, &mut rng);
    let sys = SetSystemRealization::new(6, vec![vec![0, 1, 2], vec![2, 3], vec![4, 5]]).unwrap();
    let support = Environment::single(sys, true)
        .unwrap()
        .exact_support()
        .unwrap();
    let mut g = c.benchmark_group("monte_carlo_ccepe_explicit6");
    for (name, par) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| {
                monte_carlo_revenue_on(
                    MechanismKind::Ccepe,
                    black_box(&v),
                    &support,
                    &params,
                    500,
                    1,
                    par,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, exact, monte_carlo);
criterion_main!(benches);
