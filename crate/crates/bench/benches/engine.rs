//! Hot-path benchmarks at the same scale the game benchmark trains at:
//! one teacher-forced forward pass, the full per-example training step
//! (forward + backward + gradient collection), one beam-search decode, and
//! the text metrics. Inputs are seeded so runs are comparable.

use std::hint::black_box;

use copyforge_core::autodiff::Tape;
use copyforge_core::d2t::{extract_relations, generate_dataset};
use copyforge_core::decode::{beam_search, DecodeConfig, ModelStepper};
use copyforge_core::losses::CopyMode;
use copyforge_core::metrics::{dld_similarity, novel_ngram_pct, rouge_l};
use copyforge_core::model::{init_params, ModelConfig, ModelParameters};
use copyforge_core::trainer::forward_example;
use copyforge_core::vocab::{encode_example, tokenize, EncodedExample, Vocabulary};
use criterion::{criterion_group, criterion_main, Criterion};

struct Fixture {
    cfg: ModelConfig,
    params: ModelParameters,
    example: EncodedExample,
    src_toks: Vec<String>,
    tgt_toks: Vec<String>,
}

fn fixture() -> Fixture {
    let games = generate_dataset(9, 50, 40, 0.3);
    let corpus: Vec<Vec<String>> = games
        .iter()
        .flat_map(|g| [tokenize(&g.linearized_src), tokenize(&g.summary)])
        .collect();
    let vocab = Vocabulary::build(&corpus, 320, 1);
    let cfg = ModelConfig {
        emb_dim: 32,
        hidden_dim: 48,
        enc_layers: 1,
        enc_heads: 2,
        enc_ff_dim: 64,
        vocab_size: vocab.size(),
        max_src_len: 96,
        max_tgt_len: 40,
        seed: 3,
    };
    let params = init_params(&cfg).unwrap();
    let g = &games[0];
    let example = encode_example(&g.linearized_src, &g.summary, &vocab);
    Fixture {
        cfg,
        params,
        example,
        src_toks: tokenize(&g.linearized_src),
        tgt_toks: tokenize(&g.summary),
    }
}

fn bench_forward(c: &mut Criterion) {
    let fx = fixture();
    c.bench_function("teacher_forced_forward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = fx.params.bind(&mut tape, false).unwrap();
            let fwd =
                forward_example(&mut tape, &bound, &fx.cfg, &fx.example, CopyMode::ForceCopy)
                    .unwrap();
            black_box(fwd.breakdown.total)
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let fx = fixture();
    c.bench_function("train_step_forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = fx.params.bind(&mut tape, true).unwrap();
            let fwd =
                forward_example(&mut tape, &bound, &fx.cfg, &fx.example, CopyMode::ForceCopy)
                    .unwrap();
            tape.backward(&fwd.loss).unwrap();
            black_box(fx.params.collect_grads(&tape, &bound))
        })
    });
}

fn bench_beam_search(c: &mut Criterion) {
    let fx = fixture();
    let decode = DecodeConfig { beam_size: 4, max_len: 40, block_ngram: 10, length_norm: false };
    c.bench_function("beam_search_decode", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let mut model = ModelStepper::new(
                &mut tape,
                &fx.params,
                &fx.cfg,
                &fx.example.src_ids,
                &fx.example.src_ext_ids,
                fx.example.oov_list.len(),
            )
            .unwrap();
            black_box(beam_search(&mut model, &decode).unwrap())
        })
    });
}

fn bench_metrics(c: &mut Criterion) {
    let fx = fixture();
    let games = generate_dataset(9, 50, 40, 0.3);
    let g = &games[0];
    let rels = extract_relations(&g.summary, &g.records);
    let mut shifted = rels.clone();
    shifted.rotate_left(1);

    c.bench_function("rouge_l", |b| {
        b.iter(|| black_box(rouge_l(&fx.tgt_toks, &fx.tgt_toks)))
    });
    c.bench_function("novel_bigram_pct", |b| {
        b.iter(|| black_box(novel_ngram_pct(&fx.src_toks, &fx.tgt_toks, 2)))
    });
    c.bench_function("relation_extraction", |b| {
        b.iter(|| black_box(extract_relations(&g.summary, &g.records)))
    });
    c.bench_function("relation_dld", |b| {
        b.iter(|| black_box(dld_similarity(&rels, &shifted)))
    });
}

criterion_group!(
    benches,
    bench_forward,
    bench_train_step,
    bench_beam_search,
    bench_metrics
);
criterion_main!(benches);
