//! Teacher-forced training: per-example forward/backward on private tapes,
//! fixed-order gradient aggregation, global-norm clipping, Adam with
//! decoupled weight decay, periodic validation with plateau stopping, and
//! CSV logging.
//!
//! Determinism contract: for a fixed seed and data order, training produces
//! bitwise-identical parameters and logs regardless of the worker count,
//! because workers only compute independent per-example gradients and all
//! aggregation happens serially in example order.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, restore_state, save_checkpoint, CheckpointError, RawCheckpoint, RawTensor,
};

use crate::autodiff::{AdError, Tape};
use crate::losses::{sequence_loss, CopyMode, LossBreakdown, LossError};
use crate::model::{
    decoder_step, encode, init_params, BoundParams, ModelConfig, ModelError, ModelParameters,
    StepOutput, StepState,
};
use crate::vocab::EncodedExample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("batch_size must be >= 1")]
    BadBatchSize,
    #[error("target length {len} exceeds max_tgt_len {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error(
        "non-finite loss at step {step} (batch {batch}): vocab={loss_vocab} attn={loss_attn} pgen={loss_pgen}"
    )]
    NonFiniteLoss {
        step: usize,
        batch: usize,
        loss_vocab: f64,
        loss_attn: f64,
        loss_pgen: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Optimization schedule and bookkeeping knobs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: CopyMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Validate every this many optimizer steps (0 disables periodic eval).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: CopyMode::ForceCopy,
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 8,
            epochs: 10,
            grad_clip_norm: 2.0,
            seed: 0,
            checkpoint_dir: None,
            eval_every: 50,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Stop after this many validations without improvement.
const PLATEAU_PATIENCE: usize = 3;

/// Adam moment buffers, aligned with the canonical parameter order.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Completed optimizer steps.
    pub t: u64,
}

impl OptimState {
    pub fn new(params: &ModelParameters) -> OptimState {
        OptimState {
            m: params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
            t: 0,
        }
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// One Adam update with decoupled weight decay: moments use the gradient
/// only; the decay term `lr * wd * theta` is subtracted directly and only
/// from tensors flagged for decay (weights, not biases or layer-norms).
pub fn adam_step(
    params: &mut ModelParameters,
    grads: &[Vec<f64>],
    optim: &mut OptimState,
    lr: f64,
    weight_decay: f64,
) {
    optim.t += 1;
    let t = optim.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (k, tensor) in params.tensors.iter_mut().enumerate() {
        let g = &grads[k];
        let m = &mut optim.m[k];
        let v = &mut optim.v[k];
        for i in 0..g.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let mut delta = lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            if tensor.decay {
                delta += lr * weight_decay * tensor.values[i];
            }
            tensor.values[i] -= delta;
        }
    }
}

/// Outcome of a teacher-forced pass over one example.
pub struct ForwardResult {
    pub steps: Vec<StepOutput>,
    pub breakdown: LossBreakdown,
    /// Scalar loss tensor (present so callers can run backward).
    pub loss: crate::autodiff::Tensor,
    /// Per-step generation probabilities.
    pub p_gens: Vec<f64>,
}

/// Encode the source and run the decoder over every target position with
/// teacher forcing, then assemble the sequence loss for `mode`.
pub fn forward_example(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    example: &EncodedExample,
    mode: CopyMode,
) -> Result<ForwardResult, TrainError> {
    let n_steps = example.tgt_ids.len() - 1;
    if n_steps > cfg.max_tgt_len {
        return Err(TrainError::TargetTooLong { len: n_steps, max: cfg.max_tgt_len });
    }
    let ext_size = cfg.vocab_size + example.oov_list.len();
    let enc = encode(tape, bound, &example.src_ids, cfg)?;
    let mut state = StepState::initial(tape, cfg.hidden_dim)?;
    let mut steps = Vec::with_capacity(n_steps);
    let mut p_gens = Vec::with_capacity(n_steps);
    for t in 0..n_steps {
        let prev = example.tgt_ids[t];
        let (step, next) = decoder_step(
            tape,
            bound,
            &enc,
            prev,
            &state,
            &example.src_ext_ids,
            ext_size,
        )?;
        p_gens.push(tape.value(&step.p_gen)[0]);
        steps.push(step);
        state = next;
    }
    let (breakdown, loss) = sequence_loss(tape, &steps, example, mode)?;
    Ok(ForwardResult { steps, breakdown, loss, p_gens })
}

/// Gradient of one example's loss with respect to every parameter, on a
/// private tape.
fn example_grads(
    params: &ModelParameters,
    cfg: &ModelConfig,
    example: &EncodedExample,
    mode: CopyMode,
) -> Result<(Vec<Vec<f64>>, LossBreakdown), TrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true)?;
    let fwd = forward_example(&mut tape, &bound, cfg, example, mode)?;
    tape.backward(&fwd.loss)?;
    Ok((params.collect_grads(&tape, &bound), fwd.breakdown))
}

/// Map `f` over `items` using up to `threads` workers; the result vector is
/// ordered by item index, so output never depends on scheduling.
pub(crate) fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = threads.max(1).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut collected: Vec<(usize, R)> = Vec::with_capacity(items.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(i, &items[i])));
                    }
                    local
                })
            })
            .collect();
        for h in handles {
            collected.extend(h.join().expect("worker panicked"));
        }
    });
    collected.sort_by_key(|&(i, _)| i);
    collected.into_iter().map(|(_, r)| r).collect()
}

/// One row of the training log. `val_loss`/`avg_p_copy` are present only on
/// validation steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_vocab: f64,
    pub loss_attn: f64,
    pub loss_pgen: f64,
    pub val_loss: Option<f64>,
    pub avg_p_copy: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub rows: Vec<LogRow>,
    /// Step index of the best validation loss, if any validation ran.
    pub best_step: Option<usize>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl TrainHistory {
    /// Write the log as CSV with fixed 6-decimal formatting (reruns with
    /// the same seed must produce byte-identical files).
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(
            f,
            "step,loss_total,loss_vocab,loss_attn,loss_pgen,val_loss,avg_p_copy"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.step,
                r.loss_total,
                r.loss_vocab,
                r.loss_attn,
                r.loss_pgen,
                fmt_opt(r.val_loss),
                fmt_opt(r.avg_p_copy)
            )?;
        }
        Ok(())
    }
}

/// Aggregate evaluation over a dataset: per-timestep mean losses plus the
/// average switch statistics.
#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub loss_total: f64,
    pub loss_vocab: f64,
    pub loss_attn: f64,
    pub loss_pgen: f64,
    pub avg_p_gen: f64,
    /// `1 - avg_p_gen`: the corpus-average copy probability.
    pub avg_p_copy: f64,
    pub n_examples: usize,
    pub n_steps: usize,
}

/// Teacher-forced evaluation without gradients. Means are over timesteps
/// (examples weighted by their length).
pub fn evaluate(
    params: &ModelParameters,
    cfg: &ModelConfig,
    dataset: &[EncodedExample],
    mode: CopyMode,
    threads: usize,
) -> Result<EvalReport, TrainError> {
    let per_example = parallel_map(dataset, threads, |_, ex| {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false)?;
        let fwd = forward_example(&mut tape, &bound, cfg, ex, mode)?;
        Ok::<_, TrainError>((fwd.breakdown, fwd.p_gens))
    });
    let mut sums = [0.0; 4]; // total, vocab, attn, pgen
    let mut p_gen_sum = 0.0;
    let mut n_steps = 0usize;
    for r in per_example {
        let (b, p_gens) = r?;
        for s in &b.per_step {
            sums[0] += s.total;
            sums[1] += s.vocab;
            sums[2] += s.attn;
            sums[3] += s.pgen;
        }
        p_gen_sum += p_gens.iter().sum::<f64>();
        n_steps += p_gens.len();
    }
    let denom = n_steps.max(1) as f64;
    let avg_p_gen = p_gen_sum / denom;
    Ok(EvalReport {
        loss_total: sums[0] / denom,
        loss_vocab: sums[1] / denom,
        loss_attn: sums[2] / denom,
        loss_pgen: sums[3] / denom,
        avg_p_gen,
        avg_p_copy: 1.0 - avg_p_gen,
        n_examples: dataset.len(),
        n_steps,
    })
}

/// Train a model. Returns the parameters with the best validation loss
/// (falling back to the final parameters when no validation ran) plus the
/// optimizer state and log history.
///
/// `init` resumes from a saved (parameters, optimizer) pair; resumption is
/// only exact at epoch boundaries since the per-epoch shuffle is derived
/// from `(seed, epoch)`. Plateau tracking restarts on resume.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[EncodedExample],
    valid_set: &[EncodedExample],
    threads: usize,
    init: Option<(ModelParameters, OptimState)>,
    config_digest: [u8; 32],
) -> Result<(ModelParameters, OptimState, TrainHistory), TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if train_cfg.batch_size == 0 {
        return Err(TrainError::BadBatchSize);
    }
    let (mut params, mut optim) = match init {
        Some(pair) => pair,
        None => {
            let p = init_params(model_cfg)?;
            let o = OptimState::new(&p);
            (p, o)
        }
    };
    let steps_per_epoch = train_set.len().div_ceil(train_cfg.batch_size);
    let start_epoch = (optim.t as usize) / steps_per_epoch;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ModelParameters)> = None;
    let mut evals_since_improve = 0usize;
    let mut step = optim.t as usize;

    'epochs: for epoch in start_epoch..train_cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            train_cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut rng);

        for (batch_idx, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            let examples: Vec<&EncodedExample> =
                batch.iter().map(|&i| &train_set[i]).collect();
            let results = parallel_map(&examples, threads, |_, ex| {
                example_grads(&params, model_cfg, ex, train_cfg.mode)
            });

            // Serial, in-order aggregation keeps the update bitwise stable.
            let mut agg: Vec<Vec<f64>> = params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect();
            let mut batch_losses = [0.0; 4];
            for r in results {
                let (grads, breakdown) = r?;
                if !breakdown.total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        step: step + 1,
                        batch: batch_idx,
                        loss_vocab: breakdown.loss_vocab,
                        loss_attn: breakdown.loss_attn,
                        loss_pgen: breakdown.loss_pgen,
                    });
                }
                for (a, g) in agg.iter_mut().zip(&grads) {
                    for (ai, gi) in a.iter_mut().zip(g) {
                        *ai += gi;
                    }
                }
                batch_losses[0] += breakdown.total;
                batch_losses[1] += breakdown.loss_vocab;
                batch_losses[2] += breakdown.loss_attn;
                batch_losses[3] += breakdown.loss_pgen;
            }
            let inv = 1.0 / examples.len() as f64;
            for a in agg.iter_mut() {
                for x in a.iter_mut() {
                    *x *= inv;
                }
            }
            clip_global_norm(&mut agg, train_cfg.grad_clip_norm);
            adam_step(&mut params, &agg, &mut optim, train_cfg.lr, train_cfg.weight_decay);
            step += 1;

            let mut row = LogRow {
                step,
                loss_total: batch_losses[0] * inv,
                loss_vocab: batch_losses[1] * inv,
                loss_attn: batch_losses[2] * inv,
                loss_pgen: batch_losses[3] * inv,
                val_loss: None,
                avg_p_copy: None,
            };

            let should_eval =
                train_cfg.eval_every > 0 && step % train_cfg.eval_every == 0 && !valid_set.is_empty();
            if should_eval {
                let report = evaluate(&params, model_cfg, valid_set, train_cfg.mode, threads)?;
                row.val_loss = Some(report.loss_total);
                row.avg_p_copy = Some(report.avg_p_copy);
                let improved = best
                    .as_ref()
                    .map(|(b, _, _)| report.loss_total < *b)
                    .unwrap_or(true);
                if improved {
                    best = Some((report.loss_total, step, params.clone()));
                    evals_since_improve = 0;
                    if let Some(dir) = &train_cfg.checkpoint_dir {
                        std::fs::create_dir_all(dir)?;
                        save_checkpoint(&dir.join("best.ckpt"), &params, &optim, config_digest)?;
                    }
                } else {
                    evals_since_improve += 1;
                }
                history.rows.push(row);
                if evals_since_improve >= PLATEAU_PATIENCE {
                    break 'epochs;
                }
            } else {
                history.rows.push(row);
            }
        }
    }

    if let Some(dir) = &train_cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&dir.join("last.ckpt"), &params, &optim, config_digest)?;
    }
    let final_params = match best {
        Some((_, best_step, best_params)) => {
            history.best_step = Some(best_step);
            best_params
        }
        None => params,
    };
    Ok((final_params, optim, history))
}
