//! Source encoder: shared embeddings + sinusoidal positions through
//! `enc_layers` blocks of (pad-masked multi-head self-attention, residual,
//! layer-norm, relu feed-forward, residual, layer-norm), then a linear map
//! into the decoder's hidden width.

use super::{BoundParams, ModelConfig, ModelError, LN_EPS};
use crate::autodiff::{Tape, Tensor};
use crate::vocab::PAD;

/// Encoded source: hidden states `h` (one row per source position), the
/// pad mask, and `h * W_h` precomputed once since the attention energies
/// reuse it at every decoder step.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[T_x, hidden_dim]` encoder states.
    pub h: Tensor,
    /// True at real positions, false at trailing PAD.
    pub src_mask: Vec<bool>,
    /// `[T_x, hidden_dim]` cached projection of `h` for the attention.
    pub hw: Tensor,
}

/// Classic sinusoidal table: `sin(pos / 10000^(2i/d))` on even channels,
/// the matching `cos` on odd ones.
fn positional_encoding(len: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let exponent = 2.0 * ((i / 2) as f64) / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            pe[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Run the encoder over (possibly PAD-padded) source ids. PAD positions are
/// masked out of every attention row, so the states at real positions are
/// identical whether or not trailing padding is present.
pub fn encode(
    tape: &mut Tape,
    params: &BoundParams,
    src_ids: &[usize],
    cfg: &ModelConfig,
) -> Result<EncoderOutput, ModelError> {
    let t_x = src_ids.len();
    if t_x == 0 || t_x > cfg.max_src_len {
        return Err(ModelError::SourceTooLong { len: t_x, max: cfg.max_src_len });
    }
    let src_mask: Vec<bool> = src_ids.iter().map(|&id| id != PAD).collect();
    if !src_mask.iter().any(|&m| m) {
        return Err(ModelError::SourceTooLong { len: 0, max: cfg.max_src_len });
    }

    let e = cfg.emb_dim;
    let head_dim = e / cfg.enc_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let emb = tape.gather_rows(&params.embedding, src_ids)?;
    let pe = tape.input(positional_encoding(t_x, e), vec![t_x, e], false)?;
    let mut x = tape.add(&emb, &pe)?;

    for layer in &params.enc_layers {
        // Pad-masked self-attention over all positions.
        let q = tape.matmul(&x, &layer.wq)?;
        let k = tape.matmul(&x, &layer.wk)?;
        let v = tape.matmul(&x, &layer.wv)?;
        let mut heads: Option<Tensor> = None;
        for hidx in 0..cfg.enc_heads {
            let start = hidx * head_dim;
            let qh = tape.slice_last(&q, start, head_dim)?;
            let kh = tape.slice_last(&k, start, head_dim)?;
            let vh = tape.slice_last(&v, start, head_dim)?;
            let kt = tape.transpose(&kh)?;
            let scores = tape.matmul(&qh, &kt)?;
            let scaled = tape.scale(scale, &scores)?;
            let attn = tape.softmax_masked(&scaled, &src_mask)?;
            let ctx = tape.matmul(&attn, &vh)?;
            heads = Some(match heads {
                None => ctx,
                Some(acc) => tape.concat_last(&acc, &ctx)?,
            });
        }
        let concat = heads.expect("enc_heads >= 1 by validation");
        let attn_out = tape.matmul(&concat, &layer.wo)?;
        let res1 = tape.add(&x, &attn_out)?;
        let x1 = tape.layer_norm(&res1, &layer.ln1_gain, &layer.ln1_bias, LN_EPS)?;

        // Position-wise feed-forward with relu.
        let w1 = tape.matmul(&x1, &layer.ff_w1)?;
        let b1 = tape.broadcast_rows(&layer.ff_b1, t_x)?;
        let ff1 = tape.add(&w1, &b1)?;
        let ff1 = tape.relu(&ff1)?;
        let w2 = tape.matmul(&ff1, &layer.ff_w2)?;
        let b2 = tape.broadcast_rows(&layer.ff_b2, t_x)?;
        let ff2 = tape.add(&w2, &b2)?;
        let res2 = tape.add(&x1, &ff2)?;
        x = tape.layer_norm(&res2, &layer.ln2_gain, &layer.ln2_bias, LN_EPS)?;
    }

    let proj = tape.matmul(&x, &params.enc_out_w)?;
    let ob = tape.broadcast_rows(&params.enc_out_b, t_x)?;
    let h = tape.add(&proj, &ob)?;
    let hw = tape.matmul(&h, &params.attn_w_h)?;
    Ok(EncoderOutput { h, src_mask, hw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            emb_dim: 8,
            hidden_dim: 10,
            enc_layers: 2,
            enc_heads: 2,
            enc_ff_dim: 12,
            vocab_size: 20,
            max_src_len: 12,
            max_tgt_len: 12,
            seed: 3,
        }
    }

    #[test]
    fn single_token_source_yields_one_hidden_row() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false).unwrap();
        let enc = encode(&mut tape, &bound, &[5], &cfg).unwrap();
        assert_eq!(enc.h.shape, vec![1, cfg.hidden_dim]);
        assert_eq!(enc.src_mask, vec![true]);
    }

    #[test]
    fn positional_encoding_makes_order_matter() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false).unwrap();
        let a = encode(&mut tape, &bound, &[5, 6], &cfg).unwrap();
        let b = encode(&mut tape, &bound, &[6, 5], &cfg).unwrap();
        assert_ne!(tape.value(&a.h), tape.value(&b.h));
    }

    #[test]
    fn trailing_padding_leaves_real_positions_unchanged() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false).unwrap();
        let plain = encode(&mut tape, &bound, &[7, 8, 9], &cfg).unwrap();
        let padded = encode(&mut tape, &bound, &[7, 8, 9, PAD, PAD], &cfg).unwrap();
        let hd = cfg.hidden_dim;
        let plain_rows = &tape.value(&plain.h)[..3 * hd];
        let padded_rows = &tape.value(&padded.h)[..3 * hd];
        assert_eq!(plain_rows, padded_rows);
        assert_eq!(padded.src_mask, vec![true, true, true, false, false]);
    }

    #[test]
    fn source_longer_than_limit_is_rejected() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false).unwrap();
        let ids = vec![4; cfg.max_src_len + 1];
        assert!(matches!(
            encode(&mut tape, &bound, &ids, &cfg),
            Err(ModelError::SourceTooLong { .. })
        ));
    }

    #[test]
    fn sinusoidal_table_matches_closed_form_spot_checks() {
        let pe = positional_encoding(3, 4);
        // pos 0: sin(0)=0, cos(0)=1 on alternating channels.
        assert_eq!(&pe[0..4], &[0.0, 1.0, 0.0, 1.0]);
        // pos 2, channel 0: sin(2 / 10000^0) = sin(2).
        assert!((pe[2 * 4] - 2.0_f64.sin()).abs() < 1e-15);
        // pos 1, channel 3: cos(1 / 10000^(2/4)) = cos(0.01).
        assert!((pe[4 + 3] - 0.01_f64.cos()).abs() < 1e-15);
    }
}
