use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use geotrack::autodiff::Tape;
use geotrack::corpus::{
    generate_synthetic, parse_hurdat2, stratified_split, write_hurdat2, SplitRatios,
};
use geotrack::featurize::ModelInput;
use geotrack::geograph::{build_graph, ego_sample};
use geotrack::nets::{forward, init_params, Batch, ModelConfig, Variant};
use geotrack::trainer::{prepare, TrainConfig};

fn parse(c: &mut Criterion) {
    let corpus = generate_synthetic(200, 50, 0.05, 0).unwrap();
    let text = write_hurdat2(&corpus.trajectories);
    c.bench_function("parse_hurdat2/200", |b| {
        b.iter(|| parse_hurdat2(black_box(&text)).unwrap())
    });
}

fn graph(c: &mut Criterion) {
    let corpus = generate_synthetic(200, 50, 0.05, 0).unwrap();
    c.bench_function("build_graph/200", |b| {
        b.iter(|| build_graph(black_box(&corpus.trajectories)))
    });

    let g = build_graph(&corpus.trajectories);
    let nodes = g.nodes().to_vec();
    for k in [1, 2] {
        c.bench_function(&format!("ego_sample/k{k}"), |b| {
            b.iter(|| {
                for &n in &nodes {
                    black_box(ego_sample(&g, n, k, 64).unwrap());
                }
            })
        });
    }
}

fn model(c: &mut Criterion) {
    let corpus = generate_synthetic(200, 50, 0.05, 0).unwrap();
    let split = stratified_split(&corpus.trajectories, SplitRatios::default(), 0).unwrap();
    let data = prepare(&split, &TrainConfig::default()).unwrap();
    let refs: Vec<&ModelInput> = data.train.iter().take(32).collect();

    for variant in Variant::ALL {
        let config = ModelConfig::full(variant);
        let params = init_params(&config, 0).unwrap();
        let batch = Batch::new(&refs, &config).unwrap();
        c.bench_function(&format!("forward/{variant}/32"), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, false);
                black_box(forward(&mut tape, &bound, &batch, &config, None).unwrap());
            })
        });
        let targets = batch.targets.clone().unwrap();
        c.bench_function(&format!("forward_backward/{variant}/32"), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, true);
                let pred = forward(&mut tape, &bound, &batch, &config, None).unwrap();
                let loss = tape.smooth_l1(pred, &targets, 1.0).unwrap();
                black_box(tape.backward(loss).unwrap());
            })
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = parse, graph, model
}
criterion_main!(benches);
