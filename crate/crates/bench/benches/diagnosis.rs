use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cogdiag::icdm::{aggregate_all, InteractionGraph};
use cogdiag::metrics::{doa_report, pearson};
use cogdiag::ncdm::{self, TrainConfig};
use cogdiag_bench::simulated;

fn ncdm_epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("ncdm_epoch");
    group.sample_size(10);
    for students in [50, 200] {
        let data = simulated(students, 500, 1);
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(students), &data, |b, data| {
            b.iter(|| ncdm::train(black_box(data), &config).unwrap())
        });
    }
    group.finish();
}

fn doa(c: &mut Criterion) {
    let data = simulated(200, 500, 2);
    let trained = ncdm::train(&data, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
    let states = ncdm::extract_states(&trained.params);
    c.bench_function("doa_report_200x500", |b| {
        b.iter(|| doa_report(black_box(&states), data.log(), data.qmatrix(), data.catalog()).unwrap())
    });
}

fn icdm_aggregation(c: &mut Criterion) {
    let mut group = c.benchmark_group("icdm_aggregate");
    let data = simulated(200, 500, 3);
    let graph = InteractionGraph::from_dataset(&data).unwrap();
    for hops in [0, 2] {
        group.bench_with_input(BenchmarkId::from_parameter(hops), &hops, |b, &hops| {
            b.iter(|| aggregate_all(black_box(&graph), data.qmatrix(), hops))
        });
    }
    group.finish();
}

fn correlation(c: &mut Criterion) {
    let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
    let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x + (i as f64 * 1.3).cos() * 0.2).collect();
    c.bench_function("pearson_1000", |b| b.iter(|| pearson(black_box(&xs), black_box(&ys)).unwrap()));
}

criterion_group!(benches, ncdm_epoch, doa, icdm_aggregation, correlation);
criterion_main!(benches);
