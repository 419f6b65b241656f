use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use omt_bench::problem;
use omt_core::{ksp, DualVector};

fn pricing(c: &mut Criterion) {
    let mut group = c.benchmark_group("ksp");
    group.sample_size(10);
    for (name, depth) in [("house-votes-84", 3), ("car-evaluation", 3), ("tic-tac-toe", 3)] {
        let p = problem(name, depth);
        let lambda = DualVector::slack_basis(&p.master);
        group.bench_function(format!("{name}/d{depth}/k1000"), |b| {
            b.iter(|| ksp(&p.graph, &p.data, black_box(&lambda), &[], &p.rules, 1000, 1e-6))
        });
    }
    group.finish();
}

criterion_group!(benches, pricing);
criterion_main!(benches);
