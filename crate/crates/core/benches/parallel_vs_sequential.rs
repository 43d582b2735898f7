//! Sequential against rayon execution for the data-parallel paths.
//!
//! cargo bench -p capgan-core --bench parallel_vs_sequential

use std::hint::black_box;

use capgan_core::autograd::central_difference;
use capgan_core::data::{generate_synthetic, SyntheticSpec};
use capgan_core::eval::{corpus_bleu_with, evaluate, Smoothing};
use capgan_core::model::{DecodeConfig, Model, ModelConfig};
use capgan_core::{Exec, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random_sentence(rng: &mut impl Rng, words: &[&str]) -> Vec<String> {
    let n = rng.random_range(5..15);
    (0..n).map(|_| words[rng.random_range(0..words.len())].to_string()).collect()
}

fn bleu(c: &mut Criterion) {
    let words = ["a", "dog", "cat", "on", "the", "red", "mat", "runs", "sits", "near", "blue", "ball"];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cands: Vec<Vec<String>> = (0..4000).map(|_| random_sentence(&mut rng, &words)).collect();
    let refs: Vec<Vec<Vec<String>>> = (0..4000)
        .map(|_| (0..5).map(|_| random_sentence(&mut rng, &words)).collect())
        .collect();
    let mut group = c.benchmark_group("corpus_bleu");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| corpus_bleu_with(exec, black_box(&cands), black_box(&refs), Smoothing::None).unwrap())
        });
    }
    group.finish();
}

fn greedy_evaluation(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticSpec {
        n_train: 10,
        n_val: 512,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = ModelConfig {
        vocab_size: data.vocab.len(),
        d_img: 64,
        d_emb: 32,
        d_h: 64,
        split_embedding: false,
    };
    let model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let decode = DecodeConfig::default();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(&model, &data.val, &data.features, &data.vocab, &decode, exec).unwrap())
        });
    }
    group.finish();
}

fn finite_differences(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let theta = Tensor::from_vec(&[400], (0..400).map(|_| rng.random_range(-1.0..1.0)).collect());
    let w = Tensor::from_vec(&[400, 50], (0..20_000).map(|_| rng.random_range(-1.0..1.0)).collect());
    let f = |t: &Tensor| -> f64 {
        let x = t.data();
        let wd = w.data();
        (0..50)
            .map(|j| (0..400).map(|i| x[i] * wd[i * 50 + j]).sum::<f64>().tanh())
            .sum()
    };
    let mut group = c.benchmark_group("central_difference");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| central_difference(f, black_box(&theta), 1e-5, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, bleu, greedy_evaluation, finite_differences);
criterion_main!(benches);
