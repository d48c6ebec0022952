//! Command-line front end. Every subcommand resolves one flat key=value
//! configuration (defaults, then `--config` file, then `--set` overrides,
//! then named flags — later wins), passes it to the matching pipeline
//! function, and prints a one-paragraph summary. Exit codes: 0 success,
//! 1 contract or data error, 2 usage error. Worker count comes from the
//! `COPYFORGE_THREADS` environment variable (default 1); results are
//! identical at any setting.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use copyforge_core::config::RunConfig;
use copyforge_core::pipeline::{
    run_d2t_eval, run_d2t_gen, run_evaluate, run_generate, run_grad_check, run_report, run_train,
    run_vocab_sweep, worker_threads, PipelineError,
};

#[derive(Parser)]
#[command(name = "copyforge", version, about = "Copy-mixture seq2seq: train, decode, score")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every configuration-driven subcommand.
#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable; applied after the file).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
    /// Seed for every random choice of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Training objective: mixture, force_copy or force_copy_unk.
    #[arg(long)]
    mode: Option<String>,
    /// Directory for artifacts (config key `out_dir`).
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

impl ConfigArgs {
    /// Resolve the configuration; `extra` carries the subcommand's named
    /// flags, applied last.
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig, PipelineError> {
        let mut overrides: Vec<(String, String)> = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        if let Some(mode) = &self.mode {
            overrides.push(("mode".into(), mode.clone()));
        }
        if let Some(dir) = &self.out_dir {
            overrides.push(("out_dir".into(), dir.display().to_string()));
        }
        for (key, value) in extra {
            if let Some(value) = value {
                overrides.push((key.to_string(), value.clone()));
            }
        }
        Ok(RunConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

/// Decoding flags shared by `generate` and `vocab-sweep`.
#[derive(Args)]
struct DecodeArgs {
    /// Beam width.
    #[arg(long)]
    beam: Option<usize>,
    /// Decoding step budget.
    #[arg(long)]
    max_len: Option<usize>,
    /// Block repeats of this n-gram order (0 disables).
    #[arg(long)]
    block_ngram: Option<usize>,
    /// Rank hypotheses by per-token log-probability (true/false).
    #[arg(long)]
    length_norm: Option<bool>,
}

impl DecodeArgs {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("beam_size", self.beam.map(|v| v.to_string())),
            ("max_len", self.max_len.map(|v| v.to_string())),
            ("block_ngram", self.block_ngram.map(|v| v.to_string())),
            ("length_norm", self.length_norm.map(|v| v.to_string())),
        ]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on src/tgt pair files.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training pairs (JSONL with "src" and "tgt"); config key `train_file`.
        #[arg(long, value_name = "FILE")]
        train_file: Option<PathBuf>,
        /// Validation pairs; config key `valid_file`.
        #[arg(long, value_name = "FILE")]
        valid_file: Option<PathBuf>,
    },
    /// Decode a pair file with a trained checkpoint.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint produced by `train` (vocab.json must sit next to it).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Pairs to decode; config key `test_file`.
        #[arg(long, value_name = "FILE")]
        test_file: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Score a generations file (ROUGE, copy precision, novel n-grams).
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Generations JSONL from `generate`; config key `generations_file`.
        #[arg(long, value_name = "FILE")]
        generations: Option<PathBuf>,
    },
    /// Generate the synthetic game benchmark and its splits.
    D2tGen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of games; config key `games`.
        #[arg(long)]
        games: Option<usize>,
        /// Fraction of games using out-of-vocabulary player names.
        #[arg(long)]
        oov_frac: Option<f64>,
    },
    /// Score generated game summaries for relational fidelity (RG/CS/CO).
    D2tEval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Generations JSONL; config key `generations_file`.
        #[arg(long, value_name = "FILE")]
        generations: Option<PathBuf>,
        /// Game file for the same split; config key `games_file`.
        #[arg(long, value_name = "FILE")]
        games_file: Option<PathBuf>,
    },
    /// Audit analytic gradients against finite differences in every mode.
    GradCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Consolidate report.json files from run directories into one table.
    Report {
        /// Directory whose subdirectories hold run outputs.
        #[arg(long, value_name = "DIR")]
        runs: PathBuf,
        /// Where to write the consolidated table (defaults to --runs).
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Train one model per vocabulary size and tabulate the effects.
    VocabSweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Vocabulary size caps, e.g. --sizes 50,150,400.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Training pairs (JSONL with "src" and "tgt"); config key `train_file`.
        #[arg(long, value_name = "FILE")]
        train_file: Option<PathBuf>,
        /// Validation pairs; config key `valid_file`.
        #[arg(long, value_name = "FILE")]
        valid_file: Option<PathBuf>,
        /// Pairs to decode and score per size; config key `test_file`.
        #[arg(long, value_name = "FILE")]
        test_file: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
}

fn path_pair(key: &'static str, value: &Option<PathBuf>) -> (&'static str, Option<String>) {
    (key, value.as_ref().map(|p| p.display().to_string()))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let threads = worker_threads();
    match cli.command {
        Command::Train { cfg, train_file, valid_file } => {
            let cfg = cfg.resolve(&[
                path_pair("train_file", &train_file),
                path_pair("valid_file", &valid_file),
            ])?;
            let outcome = run_train(&cfg, threads)?;
            println!(
                "trained {} examples ({} validation) with vocab {}; best step {}; artifacts in {}",
                outcome.n_train,
                outcome.n_valid,
                outcome.vocab.size(),
                outcome
                    .history
                    .best_step
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "-".to_string()),
                outcome.cfg.out_dir,
            );
        }
        Command::Generate { cfg, checkpoint, test_file, decode } => {
            let mut extra = decode.pairs();
            extra.push(path_pair("checkpoint", &checkpoint));
            extra.push(path_pair("test_file", &test_file));
            let cfg = cfg.resolve(&extra)?;
            let records = run_generate(&cfg, threads)?;
            println!("decoded {} examples into {}/generations.jsonl", records.len(), cfg.out_dir);
        }
        Command::Evaluate { cfg, generations } => {
            let cfg = cfg.resolve(&[path_pair("generations_file", &generations)])?;
            let report = run_evaluate(&cfg)?;
            println!(
                "rouge1_f {:.4} rouge2_f {:.4} rougeL_f {:.4} copy_precision {:.4} avg_p_copy {:.4} ({} examples); report in {}",
                report.rouge1_f,
                report.rouge2_f,
                report.rouge_l_f,
                report.copy_precision,
                report.avg_p_copy,
                report.n_examples,
                cfg.out_dir,
            );
        }
        Command::D2tGen { cfg, games, oov_frac } => {
            let cfg = cfg.resolve(&[
                ("games", games.map(|v| v.to_string())),
                ("oov_name_fraction", oov_frac.map(|v| v.to_string())),
            ])?;
            let summary = run_d2t_gen(&cfg)?;
            println!(
                "generated {} games ({} train / {} valid / {} test) in {}",
                summary.n_games, summary.n_train, summary.n_valid, summary.n_test, cfg.out_dir,
            );
        }
        Command::D2tEval { cfg, generations, games_file } => {
            let cfg = cfg.resolve(&[
                path_pair("generations_file", &generations),
                path_pair("games_file", &games_file),
            ])?;
            let report = run_d2t_eval(&cfg)?;
            println!(
                "rg_precision {:.2} rg_count {:.2} cs_precision {:.2} cs_recall {:.2} co_dld {:.2} ({} examples); report in {}",
                report.rg_precision,
                report.rg_count,
                report.cs_precision,
                report.cs_recall,
                report.co_dld,
                report.n_examples,
                cfg.out_dir,
            );
        }
        Command::GradCheck { cfg } => {
            let cfg = cfg.resolve(&[])?;
            let (all_pass, rows) = run_grad_check(&cfg)?;
            for row in &rows {
                println!(
                    "{:<16} {} coords, max relative error {:.3e}: {}",
                    row.mode,
                    row.coords_checked,
                    row.max_rel_err,
                    if row.pass { "pass" } else { "FAIL" },
                );
            }
            if !all_pass {
                return Err(PipelineError::Contract(
                    "gradient check failed; see gradcheck.csv".to_string(),
                ));
            }
        }
        Command::Report { runs, out_dir } => {
            let out = out_dir.unwrap_or_else(|| runs.clone());
            let n = run_report(&runs, &out)?;
            println!("consolidated {} runs into {}/consolidated.csv", n, out.display());
        }
        Command::VocabSweep { cfg, sizes, train_file, valid_file, test_file, decode } => {
            let mut extra = decode.pairs();
            extra.push(path_pair("train_file", &train_file));
            extra.push(path_pair("valid_file", &valid_file));
            extra.push(path_pair("test_file", &test_file));
            let cfg = cfg.resolve(&extra)?;
            let report = run_vocab_sweep(&cfg, &sizes, threads)?;
            for row in &report.rows {
                println!(
                    "vocab {:>6}: rouge1_f {:.4} nn1 {:.2} nn2 {:.2} nn3 {:.2} nn4 {:.2}",
                    row.vocab_size, row.rouge1_f, row.nn1, row.nn2, row.nn3, row.nn4,
                );
            }
            println!(
                "novel n-gram non-decreasing by order: {:?}; report in {}",
                report.nn_non_decreasing, cfg.out_dir,
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
