//! Beam-search decoding over the mixture output distribution.
//!
//! The search is generic over a [`StepModel`] so tests can swap in tiny
//! fixed-probability models and compare against exhaustive enumeration.
//! Every ordering decision is deterministic: candidates are ranked by log
//! probability, then smaller extended id, then earlier beam index.

use crate::autodiff::{AdError, Tape};
use crate::losses::sequence_loss;
use crate::model::{
    decoder_step, encode, BoundParams, EncoderOutput, ModelConfig, ModelError, ModelParameters,
    StepState,
};
use crate::vocab::{decode_ids, CorpusError, EncodedExample, Vocabulary, BOS, EOS, UNK};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("beam_size must be >= 1")]
    BadBeamSize,
    #[error("max_len must be >= 1")]
    BadMaxLen,
    #[error("no hypothesis survived the search (blocking pruned everything)")]
    SearchExhausted,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Search knobs.
#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_len: usize,
    /// Prune any candidate whose trailing n-gram already occurs earlier in
    /// the hypothesis. 0 disables blocking.
    pub block_ngram: usize,
    /// Rank finished hypotheses by log-prob divided by length.
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam_size: 4, max_len: 64, block_ngram: 3, length_norm: false }
    }
}

/// One decoding step: the search feeds back the previously emitted token
/// (mapped to UNK when it was copied from outside the vocabulary) and gets
/// a distribution over extended ids.
pub trait StepModel {
    type State: Clone;
    fn initial_state(&mut self) -> Result<Self::State, DecodeError>;
    /// Returns `(probabilities over ext ids, p_copy for this step, next state)`.
    fn step(
        &mut self,
        prev_id: usize,
        state: &Self::State,
    ) -> Result<(Vec<f64>, f64, Self::State), DecodeError>;
    fn ext_size(&self) -> usize;
    /// Ids at or above this are per-example copies and feed back as UNK.
    fn vocab_size(&self) -> usize;
}

/// A decoded sequence. `ext_ids` excludes BOS and the terminating EOS;
/// `p_copy_trace` has one entry per executed step, so it is one longer than
/// `ext_ids` for finished hypotheses (the step that emitted EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ext_ids: Vec<usize>,
    pub log_prob: f64,
    pub p_copy_trace: Vec<f64>,
    pub finished: bool,
}

impl Hypothesis {
    /// Ranking score: raw log-probability, or per-token when length
    /// normalization is on.
    pub fn score(&self, length_norm: bool) -> f64 {
        if length_norm {
            self.log_prob / self.ext_ids.len().max(1) as f64
        } else {
            self.log_prob
        }
    }

    pub fn avg_p_copy(&self) -> f64 {
        if self.p_copy_trace.is_empty() {
            return 0.0;
        }
        self.p_copy_trace.iter().sum::<f64>() / self.p_copy_trace.len() as f64
    }
}

/// True when the trailing `n`-gram of `ids` also occurs earlier in `ids`.
fn violates_block(ids: &[usize], n: usize) -> bool {
    if n == 0 || ids.len() < n + 1 {
        return false;
    }
    let tail = &ids[ids.len() - n..];
    ids.windows(n).take(ids.len() - n).any(|w| w == tail)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    log_prob: f64,
    ext_id: usize,
    beam_idx: usize,
}

/// Total order: higher log-prob first, then smaller id, then earlier beam.
fn cmp_candidates(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then(a.ext_id.cmp(&b.ext_id))
        .then(a.beam_idx.cmp(&b.beam_idx))
}

struct Beam<S> {
    ext_ids: Vec<usize>,
    log_prob: f64,
    p_copy_trace: Vec<f64>,
    state: S,
}

impl<S> Beam<S> {
    /// Token to feed the model next: BOS at the start, UNK for copies that
    /// have no in-vocabulary id.
    fn feedback(&self, vocab_size: usize) -> usize {
        match self.ext_ids.last() {
            None => BOS,
            Some(&id) if id >= vocab_size => UNK,
            Some(&id) => id,
        }
    }
}

/// Run beam search and return the surviving hypotheses ranked best-first.
/// A hypothesis ends either by emitting EOS or by exhausting `max_len`
/// steps; the `finished` flag distinguishes the two, and both compete in
/// the final ranking (per-token scores when `length_norm` is set).
pub fn beam_search<M: StepModel>(
    model: &mut M,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    if cfg.beam_size == 0 {
        return Err(DecodeError::BadBeamSize);
    }
    if cfg.max_len == 0 {
        return Err(DecodeError::BadMaxLen);
    }
    let vocab_size = model.vocab_size();
    let ext_size = model.ext_size();
    let mut live = vec![Beam {
        ext_ids: Vec::new(),
        log_prob: 0.0,
        p_copy_trace: Vec::new(),
        state: model.initial_state()?,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        // Appending a token can only lower a raw log-prob, so once the
        // finished pool holds beam_size hypotheses that all outscore the
        // best live prefix, no extension can change the final top-k. Under
        // length normalization that bound is unsound (a longer hypothesis
        // divides by a larger length and may still win), so we keep
        // expanding until max_len instead.
        if !cfg.length_norm && finished.len() >= cfg.beam_size {
            let mut lps: Vec<f64> = finished.iter().map(|h| h.log_prob).collect();
            lps.sort_by(|a, b| b.total_cmp(a));
            let kth = lps[cfg.beam_size - 1];
            let best_live = live
                .iter()
                .map(|b| b.log_prob)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_live <= kth {
                // Discard the live prefixes: each scores at most the k-th
                // finished hypothesis, so none can enter the returned top-k.
                live.clear();
                break;
            }
        }
        // One model step per live beam; the distribution is shared by all
        // of that beam's expansions.
        let mut expansions = Vec::with_capacity(live.len());
        for beam in &live {
            expansions.push(model.step(beam.feedback(vocab_size), &beam.state)?);
        }
        let mut candidates = Vec::with_capacity(live.len() * ext_size);
        for (beam_idx, (dist, _, _)) in expansions.iter().enumerate() {
            for (ext_id, &p) in dist.iter().enumerate() {
                let lp = if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
                let log_prob = live[beam_idx].log_prob + lp;
                if !log_prob.is_finite() {
                    continue;
                }
                let beam = &live[beam_idx];
                if cfg.block_ngram > 0 && beam.ext_ids.len() + 1 >= cfg.block_ngram + 1 {
                    let mut probe = beam.ext_ids.clone();
                    probe.push(ext_id);
                    if violates_block(&probe, cfg.block_ngram) {
                        continue;
                    }
                }
                candidates.push(Candidate { log_prob, ext_id, beam_idx });
            }
        }
        candidates.sort_by(cmp_candidates);

        let mut next_live: Vec<Beam<M::State>> = Vec::with_capacity(cfg.beam_size);
        for c in &candidates {
            if next_live.len() == cfg.beam_size {
                break;
            }
            let src = &live[c.beam_idx];
            let (_, p_copy, new_state) = &expansions[c.beam_idx];
            let mut trace = src.p_copy_trace.clone();
            trace.push(*p_copy);
            if c.ext_id == EOS {
                finished.push(Hypothesis {
                    ext_ids: src.ext_ids.clone(),
                    log_prob: c.log_prob,
                    p_copy_trace: trace,
                    finished: true,
                });
            } else {
                let mut ids = src.ext_ids.clone();
                ids.push(c.ext_id);
                next_live.push(Beam {
                    ext_ids: ids,
                    log_prob: c.log_prob,
                    p_copy_trace: trace,
                    state: new_state.clone(),
                });
            }
        }
        live = next_live;
    }

    // Hypotheses end either at EOS or by running out of length budget; both
    // kinds compete in one final ranking.
    let mut ranked: Vec<Hypothesis> = finished;
    ranked.extend(live.into_iter().map(|b| Hypothesis {
        ext_ids: b.ext_ids,
        log_prob: b.log_prob,
        p_copy_trace: b.p_copy_trace,
        finished: false,
    }));
    // Stable sort: ties keep candidate order, which already encodes the
    // id/beam tie-breaks.
    ranked.sort_by(|a, b| b.score(cfg.length_norm).total_cmp(&a.score(cfg.length_norm)));
    ranked.truncate(cfg.beam_size);
    Ok(ranked)
}

/// Greedy decoding is beam search with a single beam.
pub fn greedy<M: StepModel>(model: &mut M, cfg: &DecodeConfig) -> Result<Hypothesis, DecodeError> {
    let mut one = cfg.clone();
    one.beam_size = 1;
    let mut ranked = beam_search(model, &one)?;
    if ranked.is_empty() {
        return Err(DecodeError::SearchExhausted);
    }
    Ok(ranked.remove(0))
}

/// Adapter that drives the trained network one decoder step at a time.
pub struct ModelStepper<'t> {
    tape: &'t mut Tape,
    bound: BoundParams,
    enc: EncoderOutput,
    src_ext_ids: Vec<usize>,
    ext_size: usize,
    vocab_size: usize,
}

impl<'t> ModelStepper<'t> {
    pub fn new(
        tape: &'t mut Tape,
        params: &ModelParameters,
        cfg: &ModelConfig,
        src_ids: &[usize],
        src_ext_ids: &[usize],
        n_oov: usize,
    ) -> Result<Self, DecodeError> {
        let bound = params.bind(tape, false)?;
        let enc = encode(tape, &bound, src_ids, cfg)?;
        Ok(ModelStepper {
            tape,
            bound,
            enc,
            src_ext_ids: src_ext_ids.to_vec(),
            ext_size: cfg.vocab_size + n_oov,
            vocab_size: cfg.vocab_size,
        })
    }
}

impl StepModel for ModelStepper<'_> {
    type State = StepState;

    fn initial_state(&mut self) -> Result<StepState, DecodeError> {
        Ok(StepState::initial(self.tape, self.enc.h.shape[1])?)
    }

    fn step(
        &mut self,
        prev_id: usize,
        state: &StepState,
    ) -> Result<(Vec<f64>, f64, StepState), DecodeError> {
        let (out, next) = decoder_step(
            self.tape,
            &self.bound,
            &self.enc,
            prev_id,
            state,
            &self.src_ext_ids,
            self.ext_size,
        )?;
        let dist = self.tape.value(&out.p_final).to_vec();
        let p_copy = 1.0 - self.tape.value(&out.p_gen)[0];
        Ok((dist, p_copy, next))
    }

    fn ext_size(&self) -> usize {
        self.ext_size
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// Decode one encoded example with the trained network.
pub fn decode_example(
    params: &ModelParameters,
    cfg: &ModelConfig,
    example: &EncodedExample,
    dcfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    let mut tape = Tape::new();
    let mut stepper = ModelStepper::new(
        &mut tape,
        params,
        cfg,
        &example.src_ids,
        &example.src_ext_ids,
        example.oov_list.len(),
    )?;
    beam_search(&mut stepper, dcfg)
}

/// One line of a generation file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub src: String,
    pub tgt: String,
    pub hyp: String,
    pub avg_p_copy: f64,
}

/// Decode every source in `pairs` and return the generated records in input
/// order. Copied-but-out-of-vocabulary ids are rendered from the example's
/// own source tokens.
pub fn generate_records(
    params: &ModelParameters,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    pairs: &[(String, String)],
    dcfg: &DecodeConfig,
    threads: usize,
) -> Result<Vec<GeneratedRecord>, DecodeError> {
    let results = crate::trainer::parallel_map(pairs, threads, |_, (src, tgt)| {
        let example = crate::vocab::encode_example(src, tgt, vocab);
        let ranked = decode_example(params, cfg, &example, dcfg)?;
        let best = ranked.first().ok_or(DecodeError::SearchExhausted)?;
        let tokens = decode_ids(&best.ext_ids, vocab, &example.oov_list)?;
        Ok::<_, DecodeError>(GeneratedRecord {
            src: src.clone(),
            tgt: tgt.clone(),
            hyp: tokens.join(" "),
            avg_p_copy: best.avg_p_copy(),
        })
    });
    results.into_iter().collect()
}

/// Decode a JSONL pair file and write `{"src","tgt","hyp","avg_p_copy"}`
/// lines to `out_path`.
pub fn generate_file(
    params: &ModelParameters,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    pairs_path: &Path,
    out_path: &Path,
    dcfg: &DecodeConfig,
    threads: usize,
) -> Result<Vec<GeneratedRecord>, DecodeError> {
    let pairs: Vec<(String, String)> =
        crate::vocab::load_pairs(pairs_path)?.collect::<Result<_, _>>()?;
    let records = generate_records(params, cfg, vocab, &pairs, dcfg, threads)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records)
}

/// Teacher-forced scoring of a reference target under the trained model;
/// used by evaluation to report held-out loss alongside generation metrics.
pub fn score_example(
    params: &ModelParameters,
    cfg: &ModelConfig,
    example: &EncodedExample,
    mode: crate::losses::CopyMode,
) -> Result<crate::losses::LossBreakdown, DecodeError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false)?;
    let enc = encode(&mut tape, &bound, &example.src_ids, cfg)?;
    let ext_size = cfg.vocab_size + example.oov_list.len();
    let mut state = StepState::initial(&mut tape, cfg.hidden_dim)?;
    let mut steps = Vec::new();
    for t in 0..example.tgt_ids.len() - 1 {
        let (out, next) = decoder_step(
            &mut tape,
            &bound,
            &enc,
            example.tgt_ids[t],
            &state,
            &example.src_ext_ids,
            ext_size,
        )?;
        steps.push(out);
        state = next;
    }
    let (breakdown, _) = sequence_loss(&mut tape, &steps, example, mode)?;
    Ok(breakdown)
}
