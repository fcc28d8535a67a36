use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unidu_core::corpus::{generate_synthetic_corpus, OntologySize};
use unidu_core::metrics::{corpus_bleu, rouge_l, rouge_n};
use unidu_core::unify::{serialize_corpus, SerializeMode};
use unidu_core::{FormatVariant, Task};

fn sentences(n: usize, seed: u64) -> Vec<String> {
    let words = ["the", "taxi", "will", "arrive", "at", "noon", "a", "grey", "ford", "north"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(5..30);
            (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

fn metrics(c: &mut Criterion) {
    let hyps = sentences(500, 1);
    let refs = sentences(500, 2);
    c.bench_function("rouge_1_500", |b| {
        b.iter(|| hyps.iter().zip(&refs).map(|(h, r)| rouge_n(black_box(h), r, 1)).sum::<f64>())
    });
    c.bench_function("rouge_l_500", |b| {
        b.iter(|| hyps.iter().zip(&refs).map(|(h, r)| rouge_l(black_box(h), r)).sum::<f64>())
    });
    c.bench_function("corpus_bleu_500", |b| b.iter(|| corpus_bleu(black_box(&hyps), &refs).unwrap()));
}

fn serialization(c: &mut Criterion) {
    let corpus = generate_synthetic_corpus(3, Task::DST, 50, OntologySize::default()).unwrap();
    c.bench_function("serialize_dst_50", |b| {
        b.iter(|| serialize_corpus(black_box(&corpus), FormatVariant::QA, SerializeMode::Train { seed: 0 }).unwrap())
    });
}

criterion_group!(benches, metrics, serialization);
criterion_main!(benches);
