//! Model definition: configuration, the parameter registry, seeded
//! initialization, and the encoder/decoder forward passes.
//!
//! Parameters live outside any tape as plain `f64` buffers. Each forward
//! pass binds them onto a [`Tape`](crate::autodiff::Tape) (trainable or
//! frozen), so one set of weights can serve many tapes — one per example —
//! without copying games. The enumeration order in [`param_specs`] is the
//! single source of truth: seeded initialization draws in that order,
//! binding walks it, gradient collection and checkpoints rely on it.

mod decoder;
mod encoder;

pub use decoder::{
    attention, decoder_step, final_distribution, generation_probability, vocab_distribution,
    StepOutput, StepState,
};
pub use encoder::{encode, EncoderOutput};

use crate::autodiff::{AdError, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Lower clamp for the generation probability; the switch losses take
/// `log(p_gen)` and `log(1 - p_gen)`, so both endpoints must stay away
/// from 0 and 1.
pub const PGEN_CLAMP: f64 = 1e-6;

/// Epsilon inside the layer-norm variance square root.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("source length {len} exceeds max_src_len {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Structural hyperparameters. Desk-scale defaults keep every property test
/// and directional experiment inside a CPU-minute budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub enc_ff_dim: usize,
    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 32,
            hidden_dim: 64,
            enc_layers: 2,
            enc_heads: 1,
            enc_ff_dim: 64,
            vocab_size: 600,
            max_src_len: 64,
            max_tgt_len: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            self.emb_dim,
            self.hidden_dim,
            self.enc_layers,
            self.enc_heads,
            self.enc_ff_dim,
            self.vocab_size,
            self.max_src_len,
            self.max_tgt_len,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(ModelError::Config("all dimensions must be >= 1".into()));
        }
        if self.emb_dim % self.enc_heads != 0 {
            return Err(ModelError::Config(format!(
                "emb_dim {} not divisible by enc_heads {}",
                self.emb_dim, self.enc_heads
            )));
        }
        Ok(())
    }
}

/// How a parameter tensor is filled at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    /// Uniform in +-sqrt(6 / (fan_in + fan_out)) of the tensor's two dims.
    Xavier,
    Zero,
    One,
}

/// Name, shape, init rule, and weight-decay eligibility of one tensor.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
    pub decay: bool,
}

fn weight(name: String, shape: Vec<usize>) -> ParamSpec {
    ParamSpec { name, shape, init: InitKind::Xavier, decay: true }
}

fn bias(name: String, shape: Vec<usize>) -> ParamSpec {
    ParamSpec { name, shape, init: InitKind::Zero, decay: false }
}

fn gain(name: String, shape: Vec<usize>) -> ParamSpec {
    ParamSpec { name, shape, init: InitKind::One, decay: false }
}

/// The canonical parameter enumeration for a config. Everything that walks
/// parameters (init, bind, optimizer, checkpoints) follows this order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (e, h, f, v) = (cfg.emb_dim, cfg.hidden_dim, cfg.enc_ff_dim, cfg.vocab_size);
    let mut specs = vec![weight("embedding".into(), vec![v, e])];
    for l in 0..cfg.enc_layers {
        specs.push(weight(format!("enc.{l}.attn.wq"), vec![e, e]));
        specs.push(weight(format!("enc.{l}.attn.wk"), vec![e, e]));
        specs.push(weight(format!("enc.{l}.attn.wv"), vec![e, e]));
        specs.push(weight(format!("enc.{l}.attn.wo"), vec![e, e]));
        specs.push(gain(format!("enc.{l}.ln1.gain"), vec![e]));
        specs.push(bias(format!("enc.{l}.ln1.bias"), vec![e]));
        specs.push(weight(format!("enc.{l}.ff.w1"), vec![e, f]));
        specs.push(bias(format!("enc.{l}.ff.b1"), vec![f]));
        specs.push(weight(format!("enc.{l}.ff.w2"), vec![f, e]));
        specs.push(bias(format!("enc.{l}.ff.b2"), vec![e]));
        specs.push(gain(format!("enc.{l}.ln2.gain"), vec![e]));
        specs.push(bias(format!("enc.{l}.ln2.bias"), vec![e]));
    }
    specs.push(weight("enc.out.w".into(), vec![e, h]));
    specs.push(bias("enc.out.b".into(), vec![h]));
    specs.push(weight("dec.lstm.wx".into(), vec![e + h, 4 * h]));
    specs.push(weight("dec.lstm.wh".into(), vec![h, 4 * h]));
    specs.push(bias("dec.lstm.b".into(), vec![4 * h]));
    specs.push(weight("attn.w_h".into(), vec![h, h]));
    specs.push(weight("attn.w_s".into(), vec![h, h]));
    specs.push(weight("attn.v".into(), vec![h, 1]));
    specs.push(weight("out.w_v".into(), vec![2 * h, h]));
    specs.push(bias("out.b".into(), vec![h]));
    specs.push(weight("out.w_v2".into(), vec![h, v]));
    specs.push(bias("out.b2".into(), vec![v]));
    specs.push(weight("switch.w_h".into(), vec![h, 1]));
    specs.push(weight("switch.w_s".into(), vec![h, 1]));
    specs.push(weight("switch.w_y".into(), vec![e, 1]));
    specs.push(bias("switch.b_ptr".into(), vec![1]));
    specs
}

/// One named parameter tensor, stored row-major.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Whether decoupled weight decay applies (false for biases and
    /// layer-norm gains/biases).
    pub decay: bool,
}

impl ParamTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// All trainable state of one model, in canonical order.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    pub tensors: Vec<ParamTensor>,
}

impl ModelParameters {
    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Concatenate all tensors into one flat vector (canonical order), for
    /// the finite-difference checker.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for t in &self.tensors {
            out.extend_from_slice(&t.values);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat vector length mismatch");
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Record every tensor as a tape leaf, in canonical order. `trainable`
    /// decides whether the reverse sweep will produce gradients for them
    /// (decode-only forwards bind frozen and skip all gradient work).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundParams, AdError> {
        let mut handles = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            handles.push(tape.input(t.values.clone(), t.shape.clone(), trainable)?);
        }
        Ok(BoundParams::from_handles(handles))
    }

    /// Pull this model's gradients out of a tape after a backward sweep,
    /// aligned with the canonical tensor order. Tensors untouched by the
    /// loss get zero buffers.
    pub fn collect_grads(&self, tape: &Tape, bound: &BoundParams) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .zip(&bound.handles)
            .map(|(t, h)| {
                tape.grad(h)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect()
    }
}

/// Seeded initialization: weights uniform in +-sqrt(6/(fan_in+fan_out)),
/// biases zero, layer-norm gains one. The draw order is the canonical
/// parameter order, so a seed pins every value bitwise.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParameters, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tensors = param_specs(cfg)
        .into_iter()
        .map(|spec| {
            let numel: usize = spec.shape.iter().product();
            let values = match spec.init {
                InitKind::Zero => vec![0.0; numel],
                InitKind::One => vec![1.0; numel],
                InitKind::Xavier => {
                    let (fan_in, fan_out) = match spec.shape.as_slice() {
                        [r, c] => (*r, *c),
                        [n] => (*n, 1),
                        _ => unreachable!("specs are rank 1 or 2"),
                    };
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..numel)
                        .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
                        .collect()
                }
            };
            ParamTensor {
                name: spec.name,
                shape: spec.shape,
                values,
                decay: spec.decay,
            }
        })
        .collect();
    Ok(ModelParameters { tensors })
}

/// Per-layer tape handles of the encoder.
#[derive(Debug, Clone)]
pub struct BoundEncLayer {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// Tape handles for every model tensor, named for use in forward code.
/// `handles` keeps the canonical order for gradient collection.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub embedding: Tensor,
    pub enc_layers: Vec<BoundEncLayer>,
    pub enc_out_w: Tensor,
    pub enc_out_b: Tensor,
    pub lstm_wx: Tensor,
    pub lstm_wh: Tensor,
    pub lstm_b: Tensor,
    pub attn_w_h: Tensor,
    pub attn_w_s: Tensor,
    pub attn_v: Tensor,
    pub out_w_v: Tensor,
    pub out_b: Tensor,
    pub out_w_v2: Tensor,
    pub out_b2: Tensor,
    pub switch_w_h: Tensor,
    pub switch_w_s: Tensor,
    pub switch_w_y: Tensor,
    pub switch_b_ptr: Tensor,
    pub(crate) handles: Vec<Tensor>,
}

impl BoundParams {
    fn from_handles(handles: Vec<Tensor>) -> Self {
        // Mirrors param_specs: 1 embedding, 12 tensors per encoder layer,
        // then 16 fixed tensors.
        let n_layers = (handles.len() - 17) / 12;
        let layer = |l: usize, k: usize| handles[1 + 12 * l + k].clone();
        let enc_layers = (0..n_layers)
            .map(|l| BoundEncLayer {
                wq: layer(l, 0),
                wk: layer(l, 1),
                wv: layer(l, 2),
                wo: layer(l, 3),
                ln1_gain: layer(l, 4),
                ln1_bias: layer(l, 5),
                ff_w1: layer(l, 6),
                ff_b1: layer(l, 7),
                ff_w2: layer(l, 8),
                ff_b2: layer(l, 9),
                ln2_gain: layer(l, 10),
                ln2_bias: layer(l, 11),
            })
            .collect();
        let tail = |k: usize| handles[1 + 12 * n_layers + k].clone();
        BoundParams {
            embedding: handles[0].clone(),
            enc_layers,
            enc_out_w: tail(0),
            enc_out_b: tail(1),
            lstm_wx: tail(2),
            lstm_wh: tail(3),
            lstm_b: tail(4),
            attn_w_h: tail(5),
            attn_w_s: tail(6),
            attn_v: tail(7),
            out_w_v: tail(8),
            out_b: tail(9),
            out_w_v2: tail(10),
            out_b2: tail(11),
            switch_w_h: tail(12),
            switch_w_s: tail(13),
            switch_w_y: tail(14),
            switch_b_ptr: tail(15),
            handles,
        }
    }
}
