use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use slu_bench::{corpus, desk_model};
use slu_core::features::extract;
use slu_core::{AdamConfig, AdamState, Ctx, FeatureConfig, Tape, Tensor};

fn features(c: &mut Criterion) {
    let (waves, _) = corpus(1);
    let cfg = FeatureConfig::default();
    c.bench_function("extract one utterance", |b| {
        b.iter(|| extract(black_box(&waves[0]), &cfg).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let (_, utts) = corpus(1);
    let m = desk_model();
    let x: Tensor<f32> = utts[0].feature_tensor();
    c.bench_function("encoder forward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = m.input(&mut tape, &x).unwrap();
            let mut ctx = Ctx::new(&mut tape, &m.params);
            black_box(m.encode(&mut ctx, xv).unwrap());
        })
    });
}

fn train_step(c: &mut Criterion) {
    let (_, utts) = corpus(1);
    let mut m = desk_model();
    let x: Tensor<f32> = utts[0].feature_tensor();
    let mut adam = AdamState::new(AdamConfig::default());
    c.bench_function("multi-task train step", |b| {
        b.iter(|| {
            m.params.zero_grad();
            let mut tape = Tape::new();
            let xv = m.input(&mut tape, &x).unwrap();
            let mut ctx = Ctx::new(&mut tape, &m.params);
            let l = m
                .multitask_loss(&mut ctx, xv, &utts[0].tokens, utts[0].intent, 0.5)
                .unwrap();
            tape.backward(l.total, &mut m.params).unwrap();
            adam.step(&mut m.params).unwrap();
        })
    });
}

criterion_group!(benches, features, forward, train_step);
criterion_main!(benches);
