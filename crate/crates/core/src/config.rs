//! Flat key=value run configuration.
//!
//! One small text file drives a whole run: model shape, vocabulary cutoff,
//! training schedule, decoding, and file locations share a single flat
//! namespace. Assignments apply in order — file first, then command-line
//! overrides — so the last write to a key wins. Unknown keys are rejected
//! rather than ignored: a typo should fail loudly, not silently train a
//! default. Every command writes the fully-resolved configuration next to
//! its outputs, and that echo parses back to the identical configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decode::DecodeConfig;
use crate::losses::CopyMode;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin} line {line}: expected key=value, got {text:?}")]
    BadLine { origin: String, line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

/// Every tunable of a run, flattened into one struct. Field names double as
/// the config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Model shape.
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub enc_ff_dim: usize,
    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    // Vocabulary construction.
    pub min_freq: usize,
    // Training.
    pub mode: CopyMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub eval_every: usize,
    pub seed: u64,
    // Decoding.
    pub beam_size: usize,
    pub max_len: usize,
    pub block_ngram: usize,
    pub length_norm: bool,
    // Files. Empty string means "not set"; commands check for what they need.
    pub train_file: String,
    pub valid_file: String,
    pub test_file: String,
    pub checkpoint: String,
    pub generations_file: String,
    pub games_file: String,
    pub out_dir: String,
    // Synthetic benchmark generation.
    pub games: usize,
    pub name_pool_size: usize,
    pub oov_name_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let decode = DecodeConfig::default();
        RunConfig {
            emb_dim: model.emb_dim,
            hidden_dim: model.hidden_dim,
            enc_layers: model.enc_layers,
            enc_heads: model.enc_heads,
            enc_ff_dim: model.enc_ff_dim,
            vocab_size: model.vocab_size,
            max_src_len: model.max_src_len,
            max_tgt_len: model.max_tgt_len,
            min_freq: 1,
            mode: train.mode,
            lr: train.lr,
            weight_decay: train.weight_decay,
            batch_size: train.batch_size,
            epochs: train.epochs,
            grad_clip_norm: train.grad_clip_norm,
            eval_every: train.eval_every,
            seed: 0,
            beam_size: decode.beam_size,
            max_len: decode.max_len,
            block_ngram: decode.block_ngram,
            length_norm: decode.length_norm,
            train_file: String::new(),
            valid_file: String::new(),
            test_file: String::new(),
            checkpoint: String::new(),
            generations_file: String::new(),
            games_file: String::new(),
            out_dir: String::new(),
            games: 2000,
            name_pool_size: 40,
            oov_name_fraction: 0.3,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected true or false".to_string(),
        }),
    }
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "emb_dim" => self.emb_dim = parse_num(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_num(key, value)?,
            "enc_layers" => self.enc_layers = parse_num(key, value)?,
            "enc_heads" => self.enc_heads = parse_num(key, value)?,
            "enc_ff_dim" => self.enc_ff_dim = parse_num(key, value)?,
            "vocab_size" => self.vocab_size = parse_num(key, value)?,
            "max_src_len" => self.max_src_len = parse_num(key, value)?,
            "max_tgt_len" => self.max_tgt_len = parse_num(key, value)?,
            "min_freq" => self.min_freq = parse_num(key, value)?,
            "mode" => {
                self.mode = CopyMode::parse(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    reason: "expected mixture, force_copy or force_copy_unk".to_string(),
                })?
            }
            "lr" => self.lr = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "beam_size" => self.beam_size = parse_num(key, value)?,
            "max_len" => self.max_len = parse_num(key, value)?,
            "block_ngram" => self.block_ngram = parse_num(key, value)?,
            "length_norm" => self.length_norm = parse_bool(key, value)?,
            "train_file" => self.train_file = value.to_string(),
            "valid_file" => self.valid_file = value.to_string(),
            "test_file" => self.test_file = value.to_string(),
            "checkpoint" => self.checkpoint = value.to_string(),
            "generations_file" => self.generations_file = value.to_string(),
            "games_file" => self.games_file = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            "games" => self.games = parse_num(key, value)?,
            "name_pool_size" => self.name_pool_size = parse_num(key, value)?,
            "oov_name_fraction" => self.oov_name_fraction = parse_num(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Apply every assignment in a config text. `origin` labels error
    /// messages (a file name, or "override").
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    origin: origin.to_string(),
                    line: idx + 1,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Build a configuration from defaults, an optional file, and override
    /// assignments, in that order (later wins).
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Canonical text form: every key, grouped, in a fixed order. Parsing
    /// this text reproduces the configuration exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# model");
        let _ = writeln!(s, "emb_dim = {}", self.emb_dim);
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "enc_layers = {}", self.enc_layers);
        let _ = writeln!(s, "enc_heads = {}", self.enc_heads);
        let _ = writeln!(s, "enc_ff_dim = {}", self.enc_ff_dim);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "max_src_len = {}", self.max_src_len);
        let _ = writeln!(s, "max_tgt_len = {}", self.max_tgt_len);
        let _ = writeln!(s, "# vocabulary");
        let _ = writeln!(s, "min_freq = {}", self.min_freq);
        let _ = writeln!(s, "# training");
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "grad_clip_norm = {}", self.grad_clip_norm);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "# decoding");
        let _ = writeln!(s, "beam_size = {}", self.beam_size);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "block_ngram = {}", self.block_ngram);
        let _ = writeln!(s, "length_norm = {}", self.length_norm);
        let _ = writeln!(s, "# files");
        let _ = writeln!(s, "train_file = {}", self.train_file);
        let _ = writeln!(s, "valid_file = {}", self.valid_file);
        let _ = writeln!(s, "test_file = {}", self.test_file);
        let _ = writeln!(s, "checkpoint = {}", self.checkpoint);
        let _ = writeln!(s, "generations_file = {}", self.generations_file);
        let _ = writeln!(s, "games_file = {}", self.games_file);
        let _ = writeln!(s, "out_dir = {}", self.out_dir);
        let _ = writeln!(s, "# benchmark generation");
        let _ = writeln!(s, "games = {}", self.games);
        let _ = writeln!(s, "name_pool_size = {}", self.name_pool_size);
        let _ = writeln!(s, "oov_name_fraction = {}", self.oov_name_fraction);
        s
    }

    /// Digest of the model-shape keys. A checkpoint written under one
    /// configuration refuses to load under another whose tensors would not
    /// line up; schedule, decoding, and path keys stay out so a trained
    /// model can be decoded or evaluated under different settings.
    pub fn model_digest(&self) -> [u8; 32] {
        let mut text = String::new();
        let _ = write!(
            text,
            "emb_dim={} hidden_dim={} enc_layers={} enc_heads={} enc_ff_dim={} \
             vocab_size={} max_src_len={} max_tgt_len={}",
            self.emb_dim,
            self.hidden_dim,
            self.enc_layers,
            self.enc_heads,
            self.enc_ff_dim,
            self.vocab_size,
            self.max_src_len,
            self.max_tgt_len
        );
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.finalize().into()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            emb_dim: self.emb_dim,
            hidden_dim: self.hidden_dim,
            enc_layers: self.enc_layers,
            enc_heads: self.enc_heads,
            enc_ff_dim: self.enc_ff_dim,
            vocab_size: self.vocab_size,
            max_src_len: self.max_src_len,
            max_tgt_len: self.max_tgt_len,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            grad_clip_norm: self.grad_clip_norm,
            seed: self.seed,
            checkpoint_dir: if self.out_dir.is_empty() {
                None
            } else {
                Some(PathBuf::from(&self.out_dir))
            },
            eval_every: self.eval_every,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_size: self.beam_size,
            max_len: self.max_len,
            block_ngram: self.block_ngram,
            length_norm: self.length_norm,
        }
    }
}
