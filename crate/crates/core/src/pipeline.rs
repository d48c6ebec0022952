//! End-to-end commands: each function here is the library backend of one
//! CLI subcommand. Shared conventions:
//!
//! - every command resolves a [`RunConfig`](crate::config::RunConfig) and
//!   writes its canonical echo to `<out_dir>/resolved.cfg`, so any artifact
//!   directory records exactly how it was produced;
//! - all reports are written twice, as a CSV table and a JSON twin with the
//!   same fields;
//! - worker counts come in as an explicit argument — the CLI reads the
//!   `COPYFORGE_THREADS` environment variable (default 1) and passes it
//!   down; results never depend on the count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::autodiff::{finite_diff_check, AdError, FdReport, GradCheckError};
use crate::config::{ConfigError, RunConfig};
use crate::d2t::{self, D2tError, GameInstance};
use crate::decode::{generate_file, DecodeError, GeneratedRecord};
use crate::losses::CopyMode;
use crate::metrics::{evaluate_generation, GenerationReport};
use crate::model::{init_params, param_specs, ModelError, ModelParameters};
use crate::trainer::{
    forward_example, load_checkpoint, restore_state, train, CheckpointError, TrainError,
    TrainHistory,
};
use crate::vocab::{encode_example, load_pairs, tokenize, CorpusError, EncodedExample, Vocabulary};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    D2t(#[from] D2tError),
    #[error(transparent)]
    GradCheck(#[from] GradCheckError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Contract(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Worker count from the `COPYFORGE_THREADS` environment variable. Anything
/// missing or unparsable falls back to 1, the deterministic-by-construction
/// default (results are identical at any count; 1 only avoids surprising
/// machine load).
pub fn worker_threads() -> usize {
    std::env::var("COPYFORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn require<'a>(value: &'a str, key: &str) -> Result<&'a Path, PipelineError> {
    if value.is_empty() {
        return Err(PipelineError::Contract(format!("config key {key} is required")));
    }
    Ok(Path::new(value))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    let dir = PathBuf::from(require(&cfg.out_dir, "out_dir")?);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

/// Write the fully-resolved configuration next to the command's outputs.
fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<(), PipelineError> {
    let path = dir.join("resolved.cfg");
    fs::write(&path, cfg.to_text()).map_err(io_err(&path))?;
    Ok(())
}

fn write_file(path: &Path, content: &str) -> Result<(), PipelineError> {
    fs::write(path, content).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization");
    text.push('\n');
    write_file(path, &text)
}

/// Retokenize and clip to a token budget; model length limits are enforced
/// here once instead of erroring deep inside the forward pass.
fn clip_tokens(text: &str, limit: usize) -> String {
    let toks = tokenize(text);
    if toks.len() <= limit {
        return text.to_string();
    }
    toks[..limit].join(" ")
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    Ok(load_pairs(path)?.collect::<Result<Vec<_>, _>>()?)
}

fn encode_corpus(pairs: &[(String, String)], vocab: &Vocabulary, cfg: &RunConfig) -> Vec<EncodedExample> {
    pairs
        .iter()
        .map(|(src, tgt)| {
            let src = clip_tokens(src, cfg.max_src_len);
            // One step per target token plus EOS must fit max_tgt_len.
            let tgt = clip_tokens(tgt, cfg.max_tgt_len - 1);
            encode_example(&src, &tgt, vocab)
        })
        .collect()
}

/// What `train` leaves behind, for callers that keep going in-process.
pub struct TrainOutcome {
    pub cfg: RunConfig,
    pub vocab: Vocabulary,
    pub params: ModelParameters,
    pub history: TrainHistory,
    pub n_train: usize,
    pub n_valid: usize,
}

/// Train a model from pair files. The vocabulary is built from the training
/// split alone (size cap `vocab_size`, frequency cutoff `min_freq`), and the
/// resolved config records the size actually built. Artifacts: `vocab.json`,
/// `train_log.csv`, `best.ckpt`/`last.ckpt`, `resolved.cfg`.
pub fn run_train(cfg: &RunConfig, threads: usize) -> Result<TrainOutcome, PipelineError> {
    let mut cfg = cfg.clone();
    let dir = out_dir(&cfg)?;
    let train_pairs = read_pairs(require(&cfg.train_file, "train_file")?)?;
    let valid_pairs = if cfg.valid_file.is_empty() {
        Vec::new()
    } else {
        read_pairs(Path::new(&cfg.valid_file))?
    };

    let corpus: Vec<Vec<String>> = train_pairs
        .iter()
        .flat_map(|(src, tgt)| [tokenize(src), tokenize(tgt)])
        .collect();
    let vocab = Vocabulary::build(&corpus, cfg.vocab_size, cfg.min_freq);
    cfg.vocab_size = vocab.size();
    echo_config(&cfg, &dir)?;
    let vocab_path = dir.join("vocab.json");
    vocab.save(&vocab_path).map_err(io_err(&vocab_path))?;

    let train_set = encode_corpus(&train_pairs, &vocab, &cfg);
    let valid_set = encode_corpus(&valid_pairs, &vocab, &cfg);

    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config();
    let (params, _optim, history) = train(
        &model_cfg,
        &train_cfg,
        &train_set,
        &valid_set,
        threads,
        None,
        cfg.model_digest(),
    )?;
    let log_path = dir.join("train_log.csv");
    history.write_csv(&log_path).map_err(io_err(&log_path))?;

    Ok(TrainOutcome {
        cfg,
        vocab,
        params,
        history,
        n_train: train_set.len(),
        n_valid: valid_set.len(),
    })
}

/// Load a checkpoint written by [`run_train`]; `vocab.json` must sit next to
/// it. The model-shape digest stored in the checkpoint has to match the
/// resolved config, so a file trained under one shape cannot silently decode
/// under another.
fn load_model(cfg: &mut RunConfig) -> Result<(ModelParameters, Vocabulary), PipelineError> {
    let ckpt_path = require(&cfg.checkpoint, "checkpoint")?.to_path_buf();
    let vocab_dir = ckpt_path.parent().unwrap_or_else(|| Path::new("."));
    let vocab = Vocabulary::load(&vocab_dir.join("vocab.json"))?;
    cfg.vocab_size = vocab.size();

    let raw = load_checkpoint(&ckpt_path)?;
    if raw.digest != cfg.model_digest() {
        return Err(PipelineError::Contract(format!(
            "checkpoint {} was written under a different model shape",
            ckpt_path.display()
        )));
    }
    let specs = param_specs(&cfg.model_config());
    let (params, _optim) = restore_state(&raw, &specs)?;
    Ok((params, vocab))
}

/// Decode a pair file with a trained model into `generations.jsonl`.
pub fn run_generate(
    cfg: &RunConfig,
    threads: usize,
) -> Result<Vec<GeneratedRecord>, PipelineError> {
    let mut cfg = cfg.clone();
    let dir = out_dir(&cfg)?;
    let (params, vocab) = load_model(&mut cfg)?;
    echo_config(&cfg, &dir)?;
    let records = generate_file(
        &params,
        &cfg.model_config(),
        &vocab,
        require(&cfg.test_file, "test_file")?,
        &dir.join("generations.jsonl"),
        &cfg.decode_config(),
        threads,
    )?;
    Ok(records)
}

fn read_generations(path: &Path) -> Result<Vec<GeneratedRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: GeneratedRecord = serde_json::from_str(line).map_err(|e| {
            PipelineError::Contract(format!("{} line {}: {e}", path.display(), idx + 1))
        })?;
        records.push(rec);
    }
    Ok(records)
}

#[derive(Debug, Serialize)]
pub struct EvaluateReport {
    pub mode: String,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub copy_precision: f64,
    pub nn1: f64,
    pub nn2: f64,
    pub nn3: f64,
    pub nn4: f64,
    pub avg_p_copy: f64,
    pub n_examples: usize,
}

fn evaluate_csv(report: &EvaluateReport) -> String {
    let mut s = String::from(
        "rouge1_f,rouge2_f,rougeL_f,copy_precision,nn1,nn2,nn3,nn4,avg_p_copy\n",
    );
    s.push_str(&format!(
        "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        report.rouge1_f,
        report.rouge2_f,
        report.rouge_l_f,
        report.copy_precision,
        report.nn1,
        report.nn2,
        report.nn3,
        report.nn4,
        report.avg_p_copy,
    ));
    s
}

fn generation_to_report(cfg: &RunConfig, g: &GenerationReport) -> EvaluateReport {
    EvaluateReport {
        mode: cfg.mode.as_str().to_string(),
        rouge1_f: g.rouge1_f,
        rouge2_f: g.rouge2_f,
        rouge_l_f: g.rouge_l_f,
        copy_precision: g.copy_precision,
        nn1: g.novel_ngram[0],
        nn2: g.novel_ngram[1],
        nn3: g.novel_ngram[2],
        nn4: g.novel_ngram[3],
        avg_p_copy: g.avg_p_copy,
        n_examples: g.n_examples,
    }
}

/// Score a generations file: ROUGE, copy precision, novel n-grams, average
/// copy probability. Writes `report.csv` and `report.json`.
pub fn run_evaluate(cfg: &RunConfig) -> Result<EvaluateReport, PipelineError> {
    let dir = out_dir(cfg)?;
    let records = read_generations(require(&cfg.generations_file, "generations_file")?)?;
    let report = generation_to_report(cfg, &evaluate_generation(&records));
    echo_config(cfg, &dir)?;
    write_file(&dir.join("report.csv"), &evaluate_csv(&report))?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct D2tGenSummary {
    pub n_games: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

/// Generate the synthetic game benchmark: full game files (records plus
/// reference summary) and derived src/tgt pair files for each split.
pub fn run_d2t_gen(cfg: &RunConfig) -> Result<D2tGenSummary, PipelineError> {
    let dir = out_dir(cfg)?;
    echo_config(cfg, &dir)?;
    let games = d2t::generate_dataset(cfg.seed, cfg.games, cfg.name_pool_size, cfg.oov_name_fraction);
    let n_games = games.len();
    let (train, valid, test) = d2t::split_dataset(games, cfg.seed);
    let summary = D2tGenSummary {
        n_games,
        n_train: train.len(),
        n_valid: valid.len(),
        n_test: test.len(),
    };
    for (name, split) in [("train", &train), ("valid", &valid), ("test", &test)] {
        d2t::write_dataset(&dir.join(format!("games_{name}.jsonl")), split)?;
        d2t::write_pairs(&dir.join(format!("{name}.jsonl")), split)?;
    }
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct D2tEvalReport {
    pub mode: String,
    pub rg_precision: f64,
    pub rg_count: f64,
    pub cs_precision: f64,
    pub cs_recall: f64,
    pub co_dld: f64,
    pub n_examples: usize,
}

/// Fidelity scoring for generated game summaries: relation generation
/// against the game's true records, content selection and ordering against
/// the tuples extracted from the reference summary. Inputs are a
/// generations file and the game file for the same split, aligned by line.
pub fn run_d2t_eval(cfg: &RunConfig) -> Result<D2tEvalReport, PipelineError> {
    let dir = out_dir(cfg)?;
    let records = read_generations(require(&cfg.generations_file, "generations_file")?)?;
    let games: Vec<GameInstance> = d2t::load_dataset(require(&cfg.games_file, "games_file")?)?;
    if records.len() != games.len() {
        return Err(PipelineError::Contract(format!(
            "{} generations vs {} games; the files must describe the same split in the same order",
            records.len(),
            games.len()
        )));
    }

    let mut rg_p = 0.0;
    let mut rg_n = 0.0;
    let mut cs_p = 0.0;
    let mut cs_r = 0.0;
    let mut co = 0.0;
    for (rec, game) in records.iter().zip(&games) {
        let hyp_tuples = d2t::extract_relations(&rec.hyp, &game.records);
        let gold_tuples = d2t::extract_relations(&game.summary, &game.records);
        let (p, n) = d2t::rg_metrics(&hyp_tuples, &game.records);
        rg_p += p;
        rg_n += n as f64;
        let (p, r, o) = d2t::cs_co_metrics(&hyp_tuples, &gold_tuples);
        cs_p += p;
        cs_r += r;
        co += o;
    }
    let n = records.len().max(1) as f64;
    let report = D2tEvalReport {
        mode: cfg.mode.as_str().to_string(),
        rg_precision: rg_p / n,
        rg_count: rg_n / n,
        cs_precision: cs_p / n,
        cs_recall: cs_r / n,
        co_dld: co / n,
        n_examples: records.len(),
    };
    echo_config(cfg, &dir)?;
    let csv = format!(
        "rg_precision,rg_count,cs_precision,cs_recall,co_dld,n_examples\n{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
        report.rg_precision,
        report.rg_count,
        report.cs_precision,
        report.cs_recall,
        report.co_dld,
        report.n_examples,
    );
    write_file(&dir.join("report.csv"), &csv)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct GradCheckRow {
    pub mode: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Finite-difference audit of the analytic gradients on a small model, one
/// sweep per training mode. Tolerance and coordinate budget are fixed; the
/// seed picks which coordinates get probed on big parameter vectors.
pub const GRAD_CHECK_TOL: f64 = 1e-4;
pub const GRAD_CHECK_EPS: f64 = 1e-5;
pub const GRAD_CHECK_COORDS: usize = 200;

pub fn grad_check_model(seed: u64) -> Result<Vec<(CopyMode, FdReport)>, PipelineError> {
    use crate::autodiff::Tape;
    use crate::model::ModelConfig;

    let cfg = ModelConfig {
        emb_dim: 6,
        hidden_dim: 8,
        enc_layers: 1,
        enc_heads: 2,
        enc_ff_dim: 10,
        vocab_size: 12,
        max_src_len: 8,
        max_tgt_len: 8,
        seed,
    };
    // Three source tokens (one OOV), three target tokens exercising every
    // loss branch: a copyable in-vocab token, the OOV, and a pure
    // generation.
    let vocab_tokens: Vec<Vec<String>> = vec![
        "alpha beta gamma delta epsilon zeta eta theta"
            .split_whitespace()
            .map(str::to_string)
            .collect(),
    ];
    let vocab = Vocabulary::build(&vocab_tokens, cfg.vocab_size, 1);
    let example = encode_example("alpha rho beta", "alpha rho gamma", &vocab);
    assert_eq!(example.oov_list, vec!["rho".to_string()]);

    let params = init_params(&cfg)?;
    let theta = params.flatten();
    let mut out = Vec::new();
    for mode in [CopyMode::Mixture, CopyMode::ForceCopy, CopyMode::ForceCopyUnk] {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true)?;
        let fwd = forward_example(&mut tape, &bound, &cfg, &example, mode)?;
        tape.backward(&fwd.loss)?;
        let grads: Vec<f64> = params
            .collect_grads(&tape, &bound)
            .into_iter()
            .flatten()
            .collect();

        let mut probe = params.clone();
        let report = finite_diff_check(
            |point: &[f64]| -> Result<f64, PipelineError> {
                probe.assign_flat(point);
                let mut tape = Tape::new();
                let bound = probe.bind(&mut tape, false)?;
                let fwd = forward_example(&mut tape, &bound, &cfg, &example, mode)?;
                Ok(tape.value(&fwd.loss)[0])
            },
            &theta,
            &grads,
            GRAD_CHECK_EPS,
            GRAD_CHECK_TOL,
            GRAD_CHECK_COORDS,
            seed,
        )?;
        out.push((mode, report));
    }
    Ok(out)
}

/// CLI wrapper around [`grad_check_model`]: writes `gradcheck.csv` /
/// `gradcheck.json` and returns whether every mode passed.
pub fn run_grad_check(cfg: &RunConfig) -> Result<(bool, Vec<GradCheckRow>), PipelineError> {
    let dir = out_dir(cfg)?;
    echo_config(cfg, &dir)?;
    let rows: Vec<GradCheckRow> = grad_check_model(cfg.seed)?
        .into_iter()
        .map(|(mode, r)| GradCheckRow {
            mode: mode.as_str().to_string(),
            coords_checked: r.coords_checked,
            max_rel_err: r.max_rel_err,
            pass: r.pass,
        })
        .collect();
    let mut csv = String::from("mode,coords_checked,max_rel_err,pass\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{:.3e},{}\n",
            row.mode, row.coords_checked, row.max_rel_err, row.pass
        ));
    }
    write_file(&dir.join("gradcheck.csv"), &csv)?;
    write_json(&dir.join("gradcheck.json"), &rows)?;
    Ok((rows.iter().all(|r| r.pass), rows))
}

/// Consolidate `report.json` files from run directories into one table.
/// Scans the immediate subdirectories of `runs_dir` in name order; every
/// scalar field found anywhere becomes a column (missing cells stay empty).
pub fn run_report(runs_dir: &Path, out: &Path) -> Result<usize, PipelineError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(runs_dir)
        .map_err(io_err(runs_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("report.json").is_file())
        .collect();
    entries.sort();

    let mut rows: Vec<(String, serde_json::Map<String, serde_json::Value>)> = Vec::new();
    for dir in &entries {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            PipelineError::Contract(format!("{}: {e}", path.display()))
        })?;
        let serde_json::Value::Object(map) = value else {
            return Err(PipelineError::Contract(format!(
                "{}: expected a JSON object",
                path.display()
            )));
        };
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push((name, map));
    }

    let mut columns: Vec<String> = rows
        .iter()
        .flat_map(|(_, m)| m.keys().cloned())
        .collect();
    columns.sort();
    columns.dedup();

    let mut csv = String::from("run");
    for c in &columns {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    let mut json_rows = Vec::new();
    for (name, map) in &rows {
        csv.push_str(name);
        for c in &columns {
            csv.push(',');
            match map.get(c) {
                Some(serde_json::Value::Number(n)) => csv.push_str(&n.to_string()),
                Some(serde_json::Value::String(s)) => csv.push_str(s),
                Some(serde_json::Value::Bool(b)) => csv.push_str(if *b { "true" } else { "false" }),
                _ => {}
            }
        }
        csv.push('\n');
        let mut obj = serde_json::Map::new();
        obj.insert("run".to_string(), serde_json::Value::String(name.clone()));
        for (k, v) in map {
            obj.insert(k.clone(), v.clone());
        }
        json_rows.push(serde_json::Value::Object(obj));
    }

    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("consolidated.csv"), &csv)?;
    write_json(&out.join("consolidated.json"), &json_rows)?;
    Ok(rows.len())
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub vocab_size: usize,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub nn1: f64,
    pub nn2: f64,
    pub nn3: f64,
    pub nn4: f64,
    pub avg_p_copy: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Per n-gram order: does novelty rise (or hold) as the vocabulary
    /// shrinks the OOV set, reading rows in ascending size order?
    pub nn_non_decreasing: [bool; 4],
}

/// Train one model per vocabulary size cap (everything else identical),
/// decode the test split, and tabulate ROUGE and novel n-gram rates by
/// size. Requires the copy-only-unknowns mode, whose behavior the sweep is
/// designed to expose.
pub fn run_vocab_sweep(
    cfg: &RunConfig,
    sizes: &[usize],
    threads: usize,
) -> Result<SweepReport, PipelineError> {
    if cfg.mode != CopyMode::ForceCopyUnk {
        return Err(PipelineError::Contract(
            "vocab-sweep requires mode = force_copy_unk".to_string(),
        ));
    }
    if sizes.is_empty() {
        return Err(PipelineError::Contract("vocab-sweep needs at least one size".to_string()));
    }
    let dir = out_dir(cfg)?;
    echo_config(cfg, &dir)?;
    let test_path = require(&cfg.test_file, "test_file")?.to_path_buf();

    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in &sizes {
        let mut sub = cfg.clone();
        sub.vocab_size = size;
        sub.out_dir = dir.join(format!("size_{size}")).display().to_string();
        let outcome = run_train(&sub, threads)?;
        let records = generate_file(
            &outcome.params,
            &outcome.cfg.model_config(),
            &outcome.vocab,
            &test_path,
            &Path::new(&sub.out_dir).join("generations.jsonl"),
            &outcome.cfg.decode_config(),
            threads,
        )?;
        let g = evaluate_generation(&records);
        rows.push(SweepRow {
            vocab_size: size,
            rouge1_f: g.rouge1_f,
            rouge2_f: g.rouge2_f,
            rouge_l_f: g.rouge_l_f,
            nn1: g.novel_ngram[0],
            nn2: g.novel_ngram[1],
            nn3: g.novel_ngram[2],
            nn4: g.novel_ngram[3],
            avg_p_copy: g.avg_p_copy,
        });
    }

    let mut nn_non_decreasing = [true; 4];
    for w in rows.windows(2) {
        let a = [w[0].nn1, w[0].nn2, w[0].nn3, w[0].nn4];
        let b = [w[1].nn1, w[1].nn2, w[1].nn3, w[1].nn4];
        for i in 0..4 {
            if b[i] < a[i] {
                nn_non_decreasing[i] = false;
            }
        }
    }

    let mut csv =
        String::from("vocab_size,rouge1_f,rouge2_f,rougeL_f,nn1,nn2,nn3,nn4,avg_p_copy\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.vocab_size, r.rouge1_f, r.rouge2_f, r.rouge_l_f, r.nn1, r.nn2, r.nn3, r.nn4,
            r.avg_p_copy,
        ));
    }
    let report = SweepReport { rows, nn_non_decreasing };
    write_file(&dir.join("sweep.csv"), &csv)?;
    write_json(&dir.join("sweep.json"), &report)?;
    Ok(report)
}
