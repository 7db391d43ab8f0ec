//! Batch throughput with and without the rayon pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fraclab_core::energy::{axiom_suite, EnergyForm};
use fraclab_core::scaling::{ScalingConfig, ScalingStudy};
use fraclab_core::{build_graph, Execution, FractalSpec};

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn annulus_batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("gasket annulus fit 2..4");
    group.sample_size(10);
    for (name, exec) in modes() {
        let study = ScalingStudy::new(&FractalSpec::gasket(), 2..=4, &ScalingConfig::default(), exec).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(name), &study, |b, s| b.iter(|| s.fit(2.0).unwrap()));
    }
    group.finish();
}

fn axiom_batch(c: &mut Criterion) {
    let graph = build_graph(&FractalSpec::carpet(), 2).unwrap();
    let form = EnergyForm::on_cells(&graph, 2.0).unwrap();
    let mut group = c.benchmark_group("carpet axiom suite");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| axiom_suite(&form, 100, 7, 1e-9, exec)));
    }
    group.finish();
}

criterion_group!(benches, annulus_batch, axiom_batch);
criterion_main!(benches);
