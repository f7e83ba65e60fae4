use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use scriptor::aggregation::Aggregation;
use scriptor::checkpoint::WriterModel;
use scriptor::data::Dataset;
use scriptor::eval::evaluate_topk;
use scriptor::models::{build_network, ClassifierHead, NetworkSpec};
use scriptor::nn::Conv2d;
use scriptor::rng::rng_for;
use scriptor::sampling::TupleBatch;
use scriptor::train::tuple_gradients;
use scriptor::{Exec, Tensor};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_for(seed, "bench", 0);
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn scaled_model(writers: usize) -> WriterModel {
    let spec = NetworkSpec::sub_region().with_filters(&[8, 16, 32, 64]);
    WriterModel {
        network: build_network(&spec, 1).unwrap(),
        head: ClassifierHead::init(spec.depth(), writers, 2),
        aggregation: Aggregation::Average,
        writers: (0..writers).map(|w| format!("w{w}")).collect(),
        epochs: 0,
    }
}

fn patches(writers: usize, per: usize) -> Dataset {
    let samples =
        (0..writers).map(|w| (0..per).map(|p| random(&[1, 64, 64], (w * per + p) as u64)).collect()).collect();
    Dataset::new((0..writers).map(|w| format!("w{w}")).collect(), samples).unwrap()
}

fn conv(c: &mut Criterion) {
    let layer = Conv2d::new(random(&[16, 8, 5, 5], 1), random(&[16], 2), 1, 2).unwrap();
    let x = random(&[8, 32, 32], 3);
    let mut g = c.benchmark_group("conv 8->16 @32");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("forward+backward", name), |b| {
            b.iter(|| {
                let (y, cache) = layer.forward(black_box(&x), exec).unwrap();
                layer.backward(&cache, &y, true, exec).unwrap()
            })
        });
    }
    g.finish();
}

fn tuple_step(c: &mut Criterion) {
    let model = scaled_model(4);
    let data = patches(4, 5);
    let batch = TupleBatch { writer: 1, patches: (0..5).collect() };
    let mut g = c.benchmark_group("tuple gradients n=5");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| tuple_gradients(&model, &data, black_box(&batch), exec).unwrap()));
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let model = scaled_model(4);
    let data = patches(4, 10);
    let mut g = c.benchmark_group("evaluate top-k, 4 writers");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| evaluate_topk(&model, &data, 5, &[1, 2], 5, 9, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, conv, tuple_step, evaluation);
criterion_main!(benches);
