use bilheat_core::moment::{self, MomentOptions};
use bilheat_core::solver;
use bilheat_core::{Basis, PotentialSet, TorusField};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("step_nhe");
    for n in [64usize, 128, 256] {
        let pots = PotentialSet::preset("mtB_five", n).unwrap();
        let psi = TorusField::from_fn(1, n, |x| 0.4 + 0.1 * x[0].cos());
        let u = pots.stationary_control(1.0, 2).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solver::step_nhe(black_box(&psi), &u, &pots, 1.0, 2, 1e-3).unwrap())
        });
    }
    g.finish();
}

fn b_operator(c: &mut Criterion) {
    let mut g = c.benchmark_group("b_operator");
    for (dim, n) in [(1usize, 128usize), (2, 64)] {
        let f = TorusField::from_fn(dim, n, |x| {
            x.iter().map(|v| v.sin() + 0.3 * (2.0 * v).cos()).sum()
        });
        g.bench_with_input(BenchmarkId::new("dim", dim), &f, |b, f| {
            b.iter(|| black_box(f).b_operator())
        });
    }
    g.finish();
}

fn moment_solve(c: &mut Criterion) {
    let pots = PotentialSet::preset("mtB_five", 128).unwrap();
    let xi0 = &TorusField::basis(128, Basis::Cos(5)) + &TorusField::basis(128, Basis::Sin(3));
    let mut g = c.benchmark_group("moment_solve");
    g.sample_size(20);
    for k in [6usize, 12] {
        let prob = moment::compute_targets(&xi0, &pots, 1.0, 2, 0.5, k).unwrap();
        let opts = MomentOptions {
            strict: false,
            ..MomentOptions::default()
        };
        g.bench_with_input(BenchmarkId::new("K", k), &prob, |b, p| {
            b.iter(|| moment::solve_moment(black_box(p), &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, step, b_operator, moment_solve);
criterion_main!(benches);
