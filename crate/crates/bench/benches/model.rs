use std::hint::black_box;

use cnnlstm::eval::{self, rank_of};
use cnnlstm::model::{train_step, Adam, Batch, Model, ModelDims, TrainConfig, Variant};
use cnnlstm::text::{SentenceBatch, RESERVED};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 2000;

fn dims() -> ModelDims {
    ModelDims {
        vocab_size: VOCAB,
        embed_dim: 64,
        windows: vec![3, 4, 5],
        maps_per_window: 100,
        hidden: 128,
        paragraph_hidden: 64,
        ..ModelDims::default()
    }
}

fn sentences(n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(5..=20);
            (0..len).map(|_| rng.random_range(RESERVED.len()..VOCAB)).collect()
        })
        .collect()
}

fn encode(c: &mut Criterion) {
    let model = Model::<f32>::init(Variant::Autoencoder, &dims(), 0.01, 3.0, 1).unwrap();
    let batch = sentences(256, 2);
    c.bench_function("encode_one", |b| b.iter(|| model.encode(black_box(&batch[0])).unwrap()));
    c.bench_function("encode_256", |b| b.iter(|| eval::encode_all(&model, black_box(&batch)).unwrap()));
}

fn decode(c: &mut Criterion) {
    let model = Model::<f32>::init(Variant::Autoencoder, &dims(), 0.01, 3.0, 1).unwrap();
    let z = model.encode(&sentences(1, 3)[0]).unwrap();
    c.bench_function("greedy_decode_30", |b| b.iter(|| model.greedy_decode(black_box(&z), 30).unwrap()));
}

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    let config = TrainConfig { dropout: 0.5, ..TrainConfig::default() };
    for variant in [Variant::Autoencoder, Variant::Composite] {
        let mut model = Model::<f32>::init(variant, &dims(), 0.01, 3.0, 1).unwrap();
        let mut adam = Adam::from_config(&model.params, &config);
        let (src, tgt) = (sentences(32, 4), sentences(32, 5));
        let batch = Batch::Pairs {
            source: SentenceBatch::new(&src, 5).unwrap(),
            target: SentenceBatch::new(&tgt, 5).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        group.bench_function(BenchmarkId::from_parameter(variant), |b| {
            b.iter(|| train_step(&mut model, &batch, &mut adam, &config, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn rank(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scores: Vec<Vec<f64>> = (0..1000).map(|_| (0..1000).map(|_| rng.random()).collect()).collect();
    let truth: Vec<usize> = (0..1000).collect();
    c.bench_function("rank_eval_1000", |b| b.iter(|| eval::rank_eval(black_box(&scores), &truth).unwrap()));
    c.bench_function("rank_of_1000", |b| b.iter(|| rank_of(black_box(&scores[0]), 17).unwrap()));
}

criterion_group!(benches, encode, decode, step, rank);
criterion_main!(benches);
