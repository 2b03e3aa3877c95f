use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use isf_bench::training_data;
use isf_core::fit::{init_from_linear_fit, FitConfig, FitProblem};
use isf_core::NormalFormParams;
use std::hint::black_box;

fn bench_loss(c: &mut Criterion) {
    let pairs = training_data(100).pairs();
    let mut group = c.benchmark_group("loss_gradient");
    for alpha in [3, 5] {
        let base = FitConfig { alpha, ..Default::default() };
        let (spec, cfg) = init_from_linear_fit(&pairs, &base).unwrap();
        let problem = FitProblem::new(&pairs, &cfg, 1e-4, 0.2).unwrap();
        let mut u = nalgebra::DMatrix::zeros(2, isf_core::MultiIndexSet::new(pairs.n, alpha).unwrap().len());
        for (j, row) in cfg.u_init.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                u[(j, i)] = *v;
            }
        }
        let mu = spec.eigenvalues[spec.selection[0]];
        let theta = problem.pack(&u, &NormalFormParams::from_mu(mu, alpha));
        let mut grad = vec![0.0; problem.dim()];
        group.bench_with_input(BenchmarkId::from_parameter(alpha), &alpha, |b, _| {
            b.iter(|| problem.value_grad(black_box(&theta), &mut grad))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_loss
}
criterion_main!(benches);
