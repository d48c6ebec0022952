//! Decoder step: input-fed LSTM, additive attention, the vocabulary
//! distribution, the copy/generate switch, and the extended-vocabulary
//! mixture.
//!
//! One call to [`decoder_step`] advances the decoder by a single token and
//! returns every intermediate distribution, because both the supervised
//! losses and the copy-probability analyses need them, not just the final
//! mixture.

use super::{BoundParams, EncoderOutput, ModelError, PGEN_CLAMP};
use crate::autodiff::{Tape, Tensor, UnaryKind};

/// Recurrent state threaded between steps: LSTM hidden and cell rows plus
/// the previous context vector (input feeding).
#[derive(Debug, Clone)]
pub struct StepState {
    pub h: Tensor,
    pub c: Tensor,
    pub ctx: Tensor,
}

impl StepState {
    /// Zero state: the first step consumes BOS and an all-zero context.
    pub fn initial(tape: &mut Tape, hidden_dim: usize) -> Result<StepState, ModelError> {
        let zeros = |tape: &mut Tape| tape.input(vec![0.0; hidden_dim], vec![1, hidden_dim], false);
        Ok(StepState {
            h: zeros(tape)?,
            c: zeros(tape)?,
            ctx: zeros(tape)?,
        })
    }
}

/// Everything one decoder step produces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Decoder state row `[1, hidden]` (the LSTM hidden output).
    pub s_t: Tensor,
    /// Attention energies over source positions, `[T_x]`.
    pub e_t: Tensor,
    /// Attention distribution, `[T_x]`; sums to 1 over unmasked positions.
    pub alpha_t: Tensor,
    /// Context vector `[1, hidden]`.
    pub c_t: Tensor,
    /// Base-vocabulary distribution, `[V]`.
    pub p_vocab: Tensor,
    /// Generation probability `[1,1]`, clamped inside (0, 1).
    pub p_gen: Tensor,
    /// Mixture distribution over the extended vocabulary, `[ext_size]`.
    pub p_final: Tensor,
    /// Attention mass aggregated per extended id, `[ext_size]`; entry `w`
    /// is the total attention on source positions holding token `w`.
    pub copy_dist: Tensor,
}

/// Additive attention: `e_i = v^T tanh(W_h h_i + W_s s_t)`, masked softmax,
/// and the context `c_t = sum_i alpha_i h_i`. Uses the `W_h h` rows cached
/// in the encoder output.
pub fn attention(
    tape: &mut Tape,
    params: &BoundParams,
    enc: &EncoderOutput,
    s_t: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), ModelError> {
    let t_x = enc.src_mask.len();
    let sw = tape.matmul(s_t, &params.attn_w_s)?;
    let swb = tape.broadcast_rows(&sw, t_x)?;
    let pre = tape.add(&enc.hw, &swb)?;
    let u = tape.tanh(&pre)?;
    let e_col = tape.matmul(&u, &params.attn_v)?;
    let e_t = tape.reshape(&e_col, vec![t_x])?;
    let alpha_t = tape.softmax_masked(&e_t, &enc.src_mask)?;
    let alpha_row = tape.reshape(&alpha_t, vec![1, t_x])?;
    let c_t = tape.matmul(&alpha_row, &enc.h)?;
    Ok((e_t, alpha_t, c_t))
}

/// Two-layer affine map over `[s_t; c_t]` followed by a softmax:
/// `softmax(W'_v (W_v [s_t; c_t] + b) + b')`.
pub fn vocab_distribution(
    tape: &mut Tape,
    params: &BoundParams,
    s_t: &Tensor,
    c_t: &Tensor,
) -> Result<Tensor, ModelError> {
    let sc = tape.concat_last(s_t, c_t)?;
    let hidden_dim = params.out_b.numel();
    let vocab_size = params.out_b2.numel();
    let h1 = tape.matmul(&sc, &params.out_w_v)?;
    let b1 = tape.reshape(&params.out_b, vec![1, hidden_dim])?;
    let h1 = tape.add(&h1, &b1)?;
    let logits = tape.matmul(&h1, &params.out_w_v2)?;
    let b2 = tape.reshape(&params.out_b2, vec![1, vocab_size])?;
    let logits = tape.add(&logits, &b2)?;
    let flat = tape.reshape(&logits, vec![vocab_size])?;
    let mask = vec![true; vocab_size];
    Ok(tape.softmax_masked(&flat, &mask)?)
}

/// The soft copy/generate switch:
/// `sigmoid(w_h^T c_t + w_s^T s_t + w_y^T y_t + b_ptr)`, clamped to
/// `[PGEN_CLAMP, 1 - PGEN_CLAMP]` so its logs stay bounded.
pub fn generation_probability(
    tape: &mut Tape,
    params: &BoundParams,
    c_t: &Tensor,
    s_t: &Tensor,
    y_emb: &Tensor,
) -> Result<Tensor, ModelError> {
    let zh = tape.matmul(c_t, &params.switch_w_h)?;
    let zs = tape.matmul(s_t, &params.switch_w_s)?;
    let zy = tape.matmul(y_emb, &params.switch_w_y)?;
    let zb = tape.reshape(&params.switch_b_ptr, vec![1, 1])?;
    let z = tape.add(&zh, &zs)?;
    let z = tape.add(&z, &zy)?;
    let z = tape.add(&z, &zb)?;
    let p = tape.sigmoid(&z)?;
    Ok(tape.clamp(&p, PGEN_CLAMP, 1.0 - PGEN_CLAMP)?)
}

/// Mixture over the extended vocabulary:
/// `p_final[w] = p_gen * p_vocab[w] + (1 - p_gen) * sum_{i: w_i = w} alpha_i`,
/// where base-vocab mass occupies slots `< V` and copy mass lands wherever
/// `src_ext_ids` points. Returns the mixture and the aggregated copy
/// distribution (the scatter term), which the attention loss reuses.
pub fn final_distribution(
    tape: &mut Tape,
    p_vocab: &Tensor,
    p_gen: &Tensor,
    alpha_t: &Tensor,
    src_ext_ids: &[usize],
    ext_size: usize,
) -> Result<(Tensor, Tensor), ModelError> {
    let pv_ext = tape.extend_zeros(p_vocab, ext_size)?;
    let gen_part = tape.scale_by(p_gen, &pv_ext)?;
    let p_copy = tape.apply_unary(UnaryKind::Affine(-1.0, 1.0), p_gen)?;
    let copy_dist = tape.scatter_sum(alpha_t, src_ext_ids, ext_size)?;
    let copy_part = tape.scale_by(&p_copy, &copy_dist)?;
    let p_final = tape.add(&gen_part, &copy_part)?;
    Ok((p_final, copy_dist))
}

/// Advance the decoder one step. The previous token id must be a base-vocab
/// id (generated extended-vocab tokens are fed back as UNK by callers); the
/// LSTM consumes `[embedding(prev); prev_context]`.
pub fn decoder_step(
    tape: &mut Tape,
    params: &BoundParams,
    enc: &EncoderOutput,
    prev_token_id: usize,
    state: &StepState,
    src_ext_ids: &[usize],
    ext_size: usize,
) -> Result<(StepOutput, StepState), ModelError> {
    let hidden_dim = state.h.shape[1];
    let y_emb = tape.gather_rows(&params.embedding, &[prev_token_id])?;
    let lstm_in = tape.concat_last(&y_emb, &state.ctx)?;

    let zx = tape.matmul(&lstm_in, &params.lstm_wx)?;
    let zh = tape.matmul(&state.h, &params.lstm_wh)?;
    let zb = tape.reshape(&params.lstm_b, vec![1, 4 * hidden_dim])?;
    let gates = tape.add(&zx, &zh)?;
    let gates = tape.add(&gates, &zb)?;

    let i_pre = tape.slice_last(&gates, 0, hidden_dim)?;
    let f_pre = tape.slice_last(&gates, hidden_dim, hidden_dim)?;
    let g_pre = tape.slice_last(&gates, 2 * hidden_dim, hidden_dim)?;
    let o_pre = tape.slice_last(&gates, 3 * hidden_dim, hidden_dim)?;
    let i_gate = tape.sigmoid(&i_pre)?;
    let f_gate = tape.sigmoid(&f_pre)?;
    let g_cand = tape.tanh(&g_pre)?;
    let o_gate = tape.sigmoid(&o_pre)?;

    let keep = tape.mul(&f_gate, &state.c)?;
    let write = tape.mul(&i_gate, &g_cand)?;
    let c_new = tape.add(&keep, &write)?;
    let c_act = tape.tanh(&c_new)?;
    let s_t = tape.mul(&o_gate, &c_act)?;

    let (e_t, alpha_t, c_t) = attention(tape, params, enc, &s_t)?;
    let p_vocab = vocab_distribution(tape, params, &s_t, &c_t)?;
    let p_gen = generation_probability(tape, params, &c_t, &s_t, &y_emb)?;
    let (p_final, copy_dist) =
        final_distribution(tape, &p_vocab, &p_gen, &alpha_t, src_ext_ids, ext_size)?;

    let new_state = StepState {
        h: s_t.clone(),
        c: c_new,
        ctx: c_t.clone(),
    };
    Ok((
        StepOutput {
            s_t,
            e_t,
            alpha_t,
            c_t,
            p_vocab,
            p_gen,
            p_final,
            copy_dist,
        },
        new_state,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode, init_params, ModelConfig};
    use crate::vocab::BOS;

    fn cfg() -> ModelConfig {
        ModelConfig {
            emb_dim: 6,
            hidden_dim: 8,
            enc_layers: 1,
            enc_heads: 1,
            enc_ff_dim: 8,
            vocab_size: 14,
            max_src_len: 10,
            max_tgt_len: 10,
            seed: 11,
        }
    }

    fn sum(xs: &[f64]) -> f64 {
        xs.iter().sum()
    }

    #[test]
    fn final_distribution_matches_hand_computed_mixture() {
        // vocab_size=3, p_gen=0.6, p_vocab=[0.5,0.3,0.2], alpha=[0.7,0.3],
        // source slots [1, 3] (slot 3 is the OOV position):
        //   slot 0: 0.6*0.5                 = 0.30
        //   slot 1: 0.6*0.3 + 0.4*0.7       = 0.46
        //   slot 2: 0.6*0.2                 = 0.12
        //   slot 3:            0.4*0.3      = 0.12
        let mut tape = Tape::new();
        let p_vocab = tape.input(vec![0.5, 0.3, 0.2], vec![3], true).unwrap();
        let p_gen = tape.input(vec![0.6], vec![1, 1], true).unwrap();
        let alpha = tape.input(vec![0.7, 0.3], vec![2], true).unwrap();
        let (p_final, _) =
            final_distribution(&mut tape, &p_vocab, &p_gen, &alpha, &[1, 3], 4).unwrap();
        let got = tape.value(&p_final);
        let want = [0.30, 0.46, 0.12, 0.12];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
        assert!((sum(got) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_endpoints_follow_the_switch() {
        let mut tape = Tape::new();
        let p_vocab = tape.input(vec![0.5, 0.3, 0.2], vec![3], false).unwrap();
        let alpha = tape.input(vec![0.7, 0.3], vec![2], false).unwrap();

        let hi = tape.input(vec![1.0 - PGEN_CLAMP], vec![1, 1], false).unwrap();
        let (pf_hi, _) = final_distribution(&mut tape, &p_vocab, &hi, &alpha, &[1, 3], 4).unwrap();
        let v = tape.value(&pf_hi);
        // Nearly pure generation: OOV slot holds only residual copy mass.
        assert!(v[3] <= PGEN_CLAMP);
        assert!((v[0] - 0.5).abs() < 1e-5);

        let lo = tape.input(vec![PGEN_CLAMP], vec![1, 1], false).unwrap();
        let (pf_lo, _) = final_distribution(&mut tape, &p_vocab, &lo, &alpha, &[1, 3], 4).unwrap();
        let v = tape.value(&pf_lo);
        // Nearly pure copy: slot 2 is vocab-only, so it keeps only p_gen mass.
        assert!(v[2] <= PGEN_CLAMP);
        assert!((v[1] - 0.7).abs() < 1e-5);
    }

    #[test]
    fn attention_on_single_position_is_degenerate() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false).unwrap();
        let enc = encode(&mut tape, &bound, &[5], &cfg).unwrap();
        let state = StepState::initial(&mut tape, cfg.hidden_dim).unwrap();
        let (_, alpha, c_t) = attention(&mut tape, &bound, &enc, &state.h).unwrap();
        assert_eq!(tape.value(&alpha), &[1.0]);
        assert_eq!(tape.value(&c_t), tape.value(&enc.h));
        let _ = state;
    }

    #[test]
    fn attention_over_identical_states_is_uniform() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false).unwrap();
        // Same token at every position, no positional encoding on h: build
        // h directly instead of going through the encoder.
        let row: Vec<f64> = (0..cfg.hidden_dim).map(|i| 0.1 * i as f64).collect();
        let mut hval = Vec::new();
        for _ in 0..3 {
            hval.extend_from_slice(&row);
        }
        let h = tape.input(hval, vec![3, cfg.hidden_dim], false).unwrap();
        let hw = tape.matmul(&h, &bound.attn_w_h).unwrap();
        let enc = EncoderOutput { h, src_mask: vec![true; 3], hw };
        let state = StepState::initial(&mut tape, cfg.hidden_dim).unwrap();
        let (_, alpha, _) = attention(&mut tape, &bound, &enc, &state.h).unwrap();
        for &a in tape.value(&alpha) {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_direct_arithmetic_on_tiny_instance() {
        // T_x = 2, hidden = 2, every weight fixed by hand; compare against
        // the same formula evaluated with plain loops.
        let cfg = ModelConfig {
            emb_dim: 2,
            hidden_dim: 2,
            enc_layers: 1,
            enc_heads: 1,
            enc_ff_dim: 2,
            vocab_size: 5,
            max_src_len: 4,
            max_tgt_len: 4,
            seed: 0,
        };
        let mut params = init_params(&cfg).unwrap();
        let w_h = [0.1, -0.2, 0.3, 0.4];
        let w_s = [0.5, 0.1, -0.3, 0.2];
        let v = [0.7, -0.6];
        for t in &mut params.tensors {
            match t.name.as_str() {
                "attn.w_h" => t.values = w_h.to_vec(),
                "attn.w_s" => t.values = w_s.to_vec(),
                "attn.v" => t.values = v.to_vec(),
                _ => {}
            }
        }
        let h_rows = [[1.0, 2.0], [-1.0, 0.5]];
        let s_row = [0.4, -0.9];

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false).unwrap();
        let h = tape
            .input(h_rows.concat(), vec![2, 2], false)
            .unwrap();
        let hw = tape.matmul(&h, &bound.attn_w_h).unwrap();
        let enc = EncoderOutput { h, src_mask: vec![true; 2], hw };
        let s_t = tape.input(s_row.to_vec(), vec![1, 2], false).unwrap();
        let (e_t, alpha, c_t) = attention(&mut tape, &bound, &enc, &s_t).unwrap();

        // Direct arithmetic.
        let mut e_want = [0.0; 2];
        for i in 0..2 {
            let mut u = [0.0; 2];
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += h_rows[i][k] * w_h[k * 2 + j] + s_row[k] * w_s[k * 2 + j];
                }
                u[j] = acc.tanh();
            }
            e_want[i] = u[0] * v[0] + u[1] * v[1];
        }
        let m = e_want[0].max(e_want[1]);
        let exps = [(e_want[0] - m).exp(), (e_want[1] - m).exp()];
        let z = exps[0] + exps[1];
        let alpha_want = [exps[0] / z, exps[1] / z];
        let c_want = [
            alpha_want[0] * h_rows[0][0] + alpha_want[1] * h_rows[1][0],
            alpha_want[0] * h_rows[0][1] + alpha_want[1] * h_rows[1][1],
        ];

        for (g, w) in tape.value(&e_t).iter().zip(&e_want) {
            assert!((g - w).abs() < 1e-12);
        }
        for (g, w) in tape.value(&alpha).iter().zip(&alpha_want) {
            assert!((g - w).abs() < 1e-12);
        }
        for (g, w) in tape.value(&c_t).iter().zip(&c_want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_weights_give_uniform_vocab_distribution() {
        let cfg = cfg();
        let mut params = init_params(&cfg).unwrap();
        for t in &mut params.tensors {
            if t.name.starts_with("out.") {
                t.values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false).unwrap();
        let s = tape.input(vec![0.3; cfg.hidden_dim], vec![1, cfg.hidden_dim], false).unwrap();
        let c = tape.input(vec![-0.1; cfg.hidden_dim], vec![1, cfg.hidden_dim], false).unwrap();
        let p = vocab_distribution(&mut tape, &bound, &s, &c).unwrap();
        for &x in tape.value(&p) {
            assert!((x - 1.0 / cfg.vocab_size as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn switch_is_half_at_zero_and_clamps_when_saturated() {
        let cfg = cfg();
        let mut params = init_params(&cfg).unwrap();
        for t in &mut params.tensors {
            if t.name.starts_with("switch.") {
                t.values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false).unwrap();
        let z = |tape: &mut Tape, n: usize| tape.input(vec![0.0; n], vec![1, n], false).unwrap();
        let c = z(&mut tape, cfg.hidden_dim);
        let s = z(&mut tape, cfg.hidden_dim);
        let y = z(&mut tape, cfg.emb_dim);
        let p = generation_probability(&mut tape, &bound, &c, &s, &y).unwrap();
        assert_eq!(tape.value(&p), &[0.5]);

        for t in &mut params.tensors {
            if t.name == "switch.b_ptr" {
                t.values = vec![1e3];
            }
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false).unwrap();
        let c = z(&mut tape, cfg.hidden_dim);
        let s = z(&mut tape, cfg.hidden_dim);
        let y = z(&mut tape, cfg.emb_dim);
        let p = generation_probability(&mut tape, &bound, &c, &s, &y).unwrap();
        assert_eq!(tape.value(&p), &[1.0 - PGEN_CLAMP]);
    }

    #[test]
    fn step_output_invariants_hold_on_seeded_model() {
        let cfg = cfg();
        let params = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false).unwrap();
        let src_ids = [4, 9, 4, 7];
        // Token 4 repeats, so two positions share an extended id; token 9
        // pretends to be OOV via an out-of-vocab slot.
        let src_ext = [4, cfg.vocab_size, 4, 7];
        let ext_size = cfg.vocab_size + 1;
        let enc = encode(&mut tape, &bound, &src_ids, &cfg).unwrap();
        let mut state = StepState::initial(&mut tape, cfg.hidden_dim).unwrap();
        let mut prev = BOS;
        for _ in 0..3 {
            let (step, next) =
                decoder_step(&mut tape, &bound, &enc, prev, &state, &src_ext, ext_size).unwrap();
            assert!((sum(tape.value(&step.alpha_t)) - 1.0).abs() < 1e-9);
            assert!((sum(tape.value(&step.p_vocab)) - 1.0).abs() < 1e-9);
            assert!((sum(tape.value(&step.p_final)) - 1.0).abs() < 1e-9);
            let pg = tape.value(&step.p_gen)[0];
            assert!(pg > 0.0 && pg < 1.0);
            assert_eq!(tape.value(&step.p_final).len(), ext_size);
            state = next;
            prev = 5;
        }
    }

    #[test]
    fn identical_step_calls_are_bitwise_identical() {
        let cfg = cfg();
        let params = init_params(&cfg).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false).unwrap();
            let enc = encode(&mut tape, &bound, &[4, 9, 7], &cfg).unwrap();
            let state = StepState::initial(&mut tape, cfg.hidden_dim).unwrap();
            let (step, _) =
                decoder_step(&mut tape, &bound, &enc, BOS, &state, &[4, 9, 7], cfg.vocab_size)
                    .unwrap();
            (
                tape.value(&step.p_final).to_vec(),
                tape.value(&step.p_gen).to_vec(),
                tape.value(&step.alpha_t).to_vec(),
            )
        };
        assert_eq!(run(), run());
    }
}
