use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use synsem::corpus::{generate_math_corpus, CorpusConfig, TokenMode, Vocabulary};
use synsem::decoder::InjectionScheme;
use synsem::encoders::EncoderMode;
use synsem::model::{mix, tree_vocabulary, Model, ModelConfig, NoiseSeeds};
use synsem::training::{batch_gradients, LossWeights};

fn model(mode: EncoderMode, scheme: InjectionScheme) -> (Model, Vec<synsem::encoders::EncoderInput>) {
    let splits = generate_math_corpus(&CorpusConfig { n_train: 32, n_test: 1, ..CorpusConfig::default() }, 0);
    let mut c = ModelConfig::default();
    c.encoder.mode = mode;
    c.decoder.scheme = scheme;
    let m = Model::new(c, Vocabulary::math(), tree_vocabulary(TokenMode::Math, &splits.train), 0).unwrap();
    let inputs = splits.train.iter().map(|r| m.prepare(r).unwrap()).collect();
    (m, inputs)
}

fn batch_gradient_bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for (name, mode, scheme) in [
        ("single_memory", EncoderMode::Single, InjectionScheme::memory()),
        ("dual_addition_qkv", EncoderMode::DualGraph, InjectionScheme::addition_qkv()),
    ] {
        let (m, inputs) = model(mode, scheme);
        let batch: Vec<_> = inputs.iter().enumerate().map(|(i, x)| (x, NoiseSeeds::new(mix(7, i as u64)))).collect();
        let w = LossWeights::new(0.5, 0.5);
        group.bench_function(BenchmarkId::new("parallel", name), |b| {
            b.iter(|| batch_gradients(&m, black_box(&batch), w, true).unwrap())
        });
        group.bench_function(BenchmarkId::new("sequential", name), |b| {
            b.iter(|| batch_gradients(&m, black_box(&batch), w, false).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradient_bench);
criterion_main!(benches);
