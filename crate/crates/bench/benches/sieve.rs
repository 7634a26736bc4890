use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qsieve::mdp::recipes::{self, RecipeId};
use qsieve::mdp::sample_trajectories;
use qsieve::npiv::{dataset_moments, fit_moments, SieveSetup};
use qsieve::numerics::DEFAULT_RTOL;
use qsieve::{BasisSpec, BoxDomain, Family};

fn basis(m: usize) -> BasisSpec {
    BasisSpec::new(Family::Bspline { degree: 3 }, vec![m, m], BoxDomain::unit(2)).unwrap()
}

fn basis_eval(c: &mut Criterion) {
    let pts = BoxDomain::unit(2).grid(100);
    let mut group = c.benchmark_group("basis_eval");
    for m in [5, 10, 20] {
        let spec = basis(m);
        group.bench_with_input(BenchmarkId::from_parameter(m * m), &spec, |b, s| {
            b.iter(|| s.eval(black_box(&pts)).unwrap())
        });
    }
    group.finish();
}

fn assembly_and_fit(c: &mut Criterion) {
    let lab = recipes::build(RecipeId::Benchmark, 0.9, 1.0).unwrap();
    let ds = sample_trajectories(&lab.mdp, &lab.behavior, 100, 100, 200, 1).unwrap();
    let mut group = c.benchmark_group("sieve");
    group.sample_size(10);
    for m in [5, 10] {
        let (psi, b) = (basis(m), basis(m + 1));
        let setup = SieveSetup::new(&psi, &b, &lab.target, 0.9, &lab.action_rule);
        group.bench_function(BenchmarkId::new("assemble", psi.len()), |bch| {
            bch.iter(|| dataset_moments(black_box(&ds), &setup).unwrap())
        });
        let moments = dataset_moments(&ds, &setup).unwrap();
        group.bench_function(BenchmarkId::new("solve", psi.len()), |bch| {
            bch.iter(|| fit_moments(black_box(&moments), &psi, &b, 0.9, DEFAULT_RTOL).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, basis_eval, assembly_and_fit);
criterion_main!(benches);
