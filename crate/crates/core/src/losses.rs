//! Training objectives.
//!
//! `Mixture` trains the plain negative log-likelihood of the final mixture
//! distribution. The two supervised modes instead decompose the step loss
//! into three parts that are summed unweighted:
//!
//! - a vocabulary term, always on, with OOV targets trained as UNK;
//! - an attention term that concentrates attention mass on source
//!   positions holding the target token, active only when the target is a
//!   copy candidate (for non-candidates the matching mass is identically
//!   zero and the term is defined as 0);
//! - a switch term supervising the copy/generate decision directly. The
//!   `ForceCopy` variant pushes toward copy on every copy candidate; the
//!   `ForceCopyUnk` variant pushes toward copy only on out-of-vocabulary
//!   candidates and toward generate everywhere else, while keeping the
//!   attention term for all candidates.
//!
//! Per-sequence losses are means over timesteps, which keeps the learning
//! rate independent of target length.

use crate::autodiff::{AdError, Tape, Tensor, UnaryKind, LOG_FLOOR};
use crate::model::StepOutput;
use crate::vocab::EncodedExample;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{steps} decoder steps but {expected} target positions")]
    LengthMismatch { steps: usize, expected: usize },
    #[error("the mixture objective has no switch loss")]
    NoSwitchLossInMixture,
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Which objective trains the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyMode {
    Mixture,
    ForceCopy,
    ForceCopyUnk,
}

impl CopyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CopyMode::Mixture => "mixture",
            CopyMode::ForceCopy => "force_copy",
            CopyMode::ForceCopyUnk => "force_copy_unk",
        }
    }

    pub fn parse(s: &str) -> Option<CopyMode> {
        match s {
            "mixture" => Some(CopyMode::Mixture),
            "force_copy" => Some(CopyMode::ForceCopy),
            "force_copy_unk" => Some(CopyMode::ForceCopyUnk),
            _ => None,
        }
    }
}

/// Which way the switch loss pushes at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchBranch {
    /// Trains `-log(1 - p_gen)`: push toward copying.
    Copy,
    /// Trains `-log(p_gen)`: push toward generating.
    Generate,
}

/// The switch branch a mode takes for a (copy_candidate, in_vocab) step;
/// `None` for the mixture objective, which has no switch loss. Exactly one
/// branch fires per supervised step, and the two supervised modes disagree
/// precisely on in-vocabulary copy candidates.
pub fn switch_branch(mode: CopyMode, copy_candidate: bool, in_vocab: bool) -> Option<SwitchBranch> {
    match mode {
        CopyMode::Mixture => None,
        CopyMode::ForceCopy => Some(if copy_candidate {
            SwitchBranch::Copy
        } else {
            SwitchBranch::Generate
        }),
        CopyMode::ForceCopyUnk => Some(if copy_candidate && !in_vocab {
            SwitchBranch::Copy
        } else {
            SwitchBranch::Generate
        }),
    }
}

/// The three components at one timestep (total = vocab + attn + pgen; in
/// mixture mode the components are zero and total is the mixture NLL).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub vocab: f64,
    pub attn: f64,
    pub pgen: f64,
    pub total: f64,
}

/// Sequence-level loss report: component means plus the per-step detail.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub loss_vocab: f64,
    pub loss_attn: f64,
    pub loss_pgen: f64,
    pub total: f64,
    pub per_step: Vec<StepLosses>,
}

fn neg_log(tape: &mut Tape, x: &Tensor) -> Result<Tensor, AdError> {
    let l = tape.log(x)?;
    let n = tape.neg(&l)?;
    tape.reshape(&n, vec![1])
}

/// Baseline objective of one step: `-log p_final[target]`, floored.
pub fn mixture_nll(
    tape: &mut Tape,
    step: &StepOutput,
    tgt_ext_id: usize,
) -> Result<Tensor, LossError> {
    let p = tape.select(&step.p_final, tgt_ext_id)?;
    Ok(neg_log(tape, &p)?)
}

/// Vocabulary term: `-log p_vocab[target]` with the target in base-id
/// space (UNK when OOV). Applied at every timestep in supervised modes.
pub fn loss_vocab(tape: &mut Tape, step: &StepOutput, tgt_id: usize) -> Result<Tensor, LossError> {
    let p = tape.select(&step.p_vocab, tgt_id)?;
    Ok(neg_log(tape, &p)?)
}

/// Attention term: `-log` of the total attention mass on source positions
/// holding the target token. `step.copy_dist` already aggregates attention
/// per extended id, so this is a single lookup. Returns `None` (a zero
/// contribution) when the target is not a copy candidate.
pub fn loss_attn(
    tape: &mut Tape,
    step: &StepOutput,
    tgt_ext_id: usize,
    copy_candidate: bool,
) -> Result<Option<Tensor>, LossError> {
    if !copy_candidate {
        return Ok(None);
    }
    let mass = tape.select(&step.copy_dist, tgt_ext_id)?;
    Ok(Some(neg_log(tape, &mass)?))
}

/// Switch term per the mode's branch rule: `-log(1 - p_gen)` toward copy,
/// `-log(p_gen)` toward generate.
pub fn loss_pgen(
    tape: &mut Tape,
    step: &StepOutput,
    copy_candidate: bool,
    in_vocab: bool,
    mode: CopyMode,
) -> Result<Tensor, LossError> {
    let branch = switch_branch(mode, copy_candidate, in_vocab)
        .ok_or(LossError::NoSwitchLossInMixture)?;
    let p = match branch {
        SwitchBranch::Copy => tape.apply_unary(UnaryKind::Affine(-1.0, 1.0), &step.p_gen)?,
        SwitchBranch::Generate => step.p_gen.clone(),
    };
    Ok(neg_log(tape, &p)?)
}

/// Copy-candidate and in-vocab flags for the step predicting target id
/// position `j` (1-based into `tgt_ids`). The trailing EOS position counts
/// as an in-vocabulary non-candidate.
pub fn step_flags(example: &EncodedExample, j: usize) -> (bool, bool) {
    if j >= 1 && j <= example.tgt_tokens.len() {
        (example.copy_candidate[j - 1], example.in_vocab[j - 1])
    } else {
        (false, true)
    }
}

/// Combine the per-step outputs of a teacher-forced pass into the sequence
/// loss for `mode`. `steps[t]` must be the step predicting `tgt_ids[t+1]`.
/// Returns the breakdown plus the scalar loss tensor for the backward pass.
pub fn sequence_loss(
    tape: &mut Tape,
    steps: &[StepOutput],
    example: &EncodedExample,
    mode: CopyMode,
) -> Result<(LossBreakdown, Tensor), LossError> {
    let expected = example.tgt_ids.len() - 1;
    if steps.len() != expected {
        return Err(LossError::LengthMismatch { steps: steps.len(), expected });
    }
    let n = steps.len() as f64;
    let mut per_step = Vec::with_capacity(steps.len());
    let mut acc: Option<Tensor> = None;
    for (t, step) in steps.iter().enumerate() {
        let j = t + 1;
        let step_total = match mode {
            CopyMode::Mixture => {
                let l = mixture_nll(tape, step, example.tgt_ext_ids[j])?;
                per_step.push(StepLosses {
                    vocab: 0.0,
                    attn: 0.0,
                    pgen: 0.0,
                    total: tape.value(&l)[0],
                });
                l
            }
            CopyMode::ForceCopy | CopyMode::ForceCopyUnk => {
                let (cc, iv) = step_flags(example, j);
                let lv = loss_vocab(tape, step, example.tgt_ids[j])?;
                let la = loss_attn(tape, step, example.tgt_ext_ids[j], cc)?;
                let lp = loss_pgen(tape, step, cc, iv, mode)?;
                let vocab = tape.value(&lv)[0];
                let attn = la.as_ref().map(|l| tape.value(l)[0]).unwrap_or(0.0);
                let pgen = tape.value(&lp)[0];
                let mut total = lv;
                if let Some(la) = la {
                    total = tape.add(&total, &la)?;
                }
                let total = tape.add(&total, &lp)?;
                per_step.push(StepLosses {
                    vocab,
                    attn,
                    pgen,
                    total: tape.value(&total)[0],
                });
                total
            }
        };
        acc = Some(match acc {
            None => step_total,
            Some(a) => tape.add(&a, &step_total)?,
        });
    }
    let total_tensor = tape.scale(1.0 / n, &acc.expect("tgt_ids always contain BOS and EOS"))?;
    let mean = |f: fn(&StepLosses) -> f64| per_step.iter().map(f).sum::<f64>() / n;
    let breakdown = LossBreakdown {
        loss_vocab: mean(|s| s.vocab),
        loss_attn: mean(|s| s.attn),
        loss_pgen: mean(|s| s.pgen),
        total: tape.value(&total_tensor)[0],
        per_step,
    };
    Ok((breakdown, total_tensor))
}

/// Upper bound of every component: `-log` of the probability floor.
pub fn max_component_loss() -> f64 {
    -LOG_FLOOR.ln()
}
