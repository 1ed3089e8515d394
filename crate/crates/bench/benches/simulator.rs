use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use scnn::bundled;
use scnn::dse::explore;
use scnn::memrd::generate_schedule;
use scnn::model::{ConvParams, LayerKind, MODEL_INPUT};
use scnn::pe_array::simulate_conv;
use scnn::perf::model_latency;
use scnn::{ArchConfig, FpgaSpec, LayerDescriptor, ModelDescriptor, Shape, Tensor};

const CFG: ArchConfig = ArchConfig { pe_num: 16, vec_fac: 16, reuse_fac: 4 };

fn conv_layer() -> (LayerDescriptor, Tensor<f32>, Vec<f32>, Vec<f32>) {
    let p = ConvParams::new(64, 64, 3, 1, 1);
    let l = LayerDescriptor::new("c", LayerKind::Conv(p), &[MODEL_INPUT]);
    let x = Tensor::filled(Shape::new(64, 28, 28), 0.5f32);
    (l, x, vec![0.01; p.weight_len()], vec![0.0; 64])
}

fn kernels(c: &mut Criterion) {
    let (l, x, w, b) = conv_layer();
    c.bench_function("simulate_conv 64x28x28 3x3", |bench| {
        bench.iter(|| simulate_conv(black_box(&x), &w, &b, &l, &CFG).unwrap())
    });
    c.bench_function("generate_schedule 64x28x28 3x3", |bench| {
        bench.iter(|| generate_schedule(black_box(&l), &CFG, x.shape()).unwrap())
    });
}

fn models(c: &mut Criterion) {
    let arria = FpgaSpec::from_json(bundled::ARRIA10).unwrap();
    let alexnet = ModelDescriptor::from_json(bundled::ALEXNET).unwrap();
    let resnet = ModelDescriptor::from_json(bundled::RESNET152).unwrap();
    c.bench_function("model_latency resnet152", |bench| {
        bench.iter(|| model_latency(black_box(&resnet), &CFG, &arria, 1).unwrap())
    });
    c.bench_function("explore alexnet arria10", |bench| bench.iter(|| explore(black_box(&alexnet), &arria).unwrap()));
}

criterion_group!(benches, kernels, models);
criterion_main!(benches);
