//! Throughput of the hot paths at desk scale.

use std::hint::black_box;

use astrolm::model::{forward, init_params, mlm_loss, MaskedTarget, Mode};
use astrolm::ner::{mcc, ConfusionMatrix};
use astrolm::synthetic::{citation_corpus, citation_vocabulary};
use astrolm::tokenizer::train_wordpiece;
use astrolm::ModelConfig;
use criterion::{criterion_group, criterion_main, Criterion};

fn tokenizer(c: &mut Criterion) {
    let corpus = citation_corpus(40, 3, 1);
    let vocab = train_wordpiece(&corpus, 200, 1).unwrap();
    let text: String = corpus.paragraphs().collect::<Vec<_>>().join(" ");
    c.bench_function("wordpiece_train_40_docs", |b| {
        b.iter(|| train_wordpiece(black_box(&corpus), 200, 1).unwrap())
    });
    c.bench_function("encode_128", |b| {
        b.iter(|| vocab.encode(black_box(&text), 128))
    });
}

fn encoder(c: &mut Criterion) {
    let vocab = citation_vocabulary();
    let params = init_params(&ModelConfig {
        vocab_size: vocab.len(),
        ..Default::default()
    })
    .unwrap();
    let corpus = citation_corpus(8, 2, 2);
    let batch: Vec<_> = corpus
        .paragraphs()
        .take(8)
        .map(|p| vocab.encode(p, 32))
        .collect();
    let targets: Vec<MaskedTarget> = (0..8)
        .map(|s| MaskedTarget {
            sequence: s,
            position: 3,
            target: 10,
        })
        .collect();
    c.bench_function("forward_8x32", |b| {
        b.iter(|| forward(&params, black_box(&batch), Mode::Eval).unwrap())
    });
    c.bench_function("forward_backward_8x32", |b| {
        b.iter(|| {
            let mut out = forward(&params, black_box(&batch), Mode::Train { step: 0 }).unwrap();
            let loss = mlm_loss(&params, &out, &targets).unwrap();
            out.backward(&params, &loss).unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let k = 65;
    let counts: Vec<u64> = (0..k * k)
        .map(|i| {
            if i % (k + 1) == 0 {
                500
            } else {
                (i % 7) as u64
            }
        })
        .collect();
    let m = ConfusionMatrix::from_counts(k, counts).unwrap();
    c.bench_function("mcc_65_labels", |b| b.iter(|| mcc(black_box(&m)).unwrap()));
}

criterion_group!(benches, tokenizer, encoder, metrics);
criterion_main!(benches);
