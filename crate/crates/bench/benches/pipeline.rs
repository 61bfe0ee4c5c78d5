use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use discal_bench::fixture;
use discal_core::decoding::{beam_search, diverse_beam_search, DecodeConfig, ModelDecoder};
use discal_core::distill::{discal_loss_with_grad, nll_loss_with_grad, CalibrationSettings, DiscalSettings};
use discal_core::seq2seq::AttentionScale;
use discal_core::textmetrics::{calibration_scores, novel_ngram_ratio, rouge_l_f1, rouge_n_f1};

fn metrics(c: &mut Criterion) {
    let (data, _, _) = fixture(8);
    let ex = &data[0];
    c.bench_function("rouge_1_2_l", |b| {
        b.iter(|| {
            black_box(rouge_n_f1(&ex.gold, &ex.document, 1));
            black_box(rouge_n_f1(&ex.gold, &ex.document, 2));
            black_box(rouge_l_f1(&ex.gold, &ex.document))
        })
    });
    c.bench_function("novel_5gram", |b| b.iter(|| black_box(novel_ngram_ratio(&ex.gold, &ex.document, 5))));
    let candidates: Vec<Vec<u32>> = data.iter().map(|e| e.gold.clone()).take(6).collect();
    c.bench_function("calibration_scores_n6", |b| {
        b.iter(|| black_box(calibration_scores(&candidates, &ex.gold, &ex.document, 0.2).unwrap()))
    });
}

fn model(c: &mut Criterion) {
    let (data, _, model) = fixture(8);
    let ex = &data[0];
    c.bench_function("nll_forward_backward", |b| {
        b.iter(|| {
            let mut g = model.zero_grads();
            black_box(nll_loss_with_grad(&model, &ex.document, &ex.gold, 0.1, &mut g).unwrap())
        })
    });
    let candidates: Vec<Vec<u32>> = data.iter().map(|e| e.gold.clone()).take(6).collect();
    let ranked = calibration_scores(&candidates, &ex.gold, &ex.document, 0.2).unwrap();
    let settings = DiscalSettings {
        eta: 0.1,
        smoothing: 0.1,
        calibration: CalibrationSettings {
            margin: 0.001,
            alpha: 1.0,
            literal: false,
        },
    };
    c.bench_function("discal_forward_backward_n6", |b| {
        b.iter(|| {
            let mut g = model.zero_grads();
            black_box(discal_loss_with_grad(&model, &ex.document, &ranked, settings, &mut g).unwrap())
        })
    });
}

fn decoding(c: &mut Criterion) {
    let (data, _, model) = fixture(2);
    let doc = &data[0].document;
    let cfg = DecodeConfig::default();
    c.bench_function("beam_search_4", |b| {
        b.iter(|| {
            let dec = ModelDecoder::new(&model, doc, AttentionScale::UNIT).unwrap();
            black_box(beam_search(&dec, &cfg).unwrap())
        })
    });
    let diverse = DecodeConfig {
        beam_size: 6,
        num_groups: 6,
        ..DecodeConfig::default()
    };
    c.bench_function("diverse_beam_search_6x1", |b| {
        b.iter(|| {
            let dec = ModelDecoder::new(&model, doc, AttentionScale::new(1.5).unwrap()).unwrap();
            black_box(diverse_beam_search(&dec, &diverse).unwrap())
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = metrics, model, decoding
}
criterion_main!(benches);
