//! Command-line front end: one binary, six subcommands.
//!
//! Every command prints a single `key=value` summary line on stdout and writes
//! the effective configuration next to its outputs.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arraycore::Checkpoint;
use crate::config::{load_config_onto, parse_override, ModelConfig};
use crate::corpus::{corpus_vocab, preprocess, read_jsonl, write_jsonl, Document, RawExample, RuleTagger, Vocab};
use crate::decode::{choose_sentences, predict, PredictOptions, PredictionSet};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, Cutoff, EvalDoc, EvalOptions, EvalReport, Split};
use crate::extgen::{ExtGenModel, TrainExample};
use crate::objective::{train_extgen, train_selector, LossWeights, TrainReport};
use crate::selector::SelectorModel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

pub const SEED_ENV: &str = "SEGNET_SEED";

#[derive(Debug, Parser)]
#[command(name = "segnet", version, about = "Keyphrase extraction and generation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Random seed; falls back to SEGNET_SEED, then the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Base settings for training: full, desk or tiny.
    #[arg(long, global = true, default_value = "desk")]
    pub profile: String,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Configuration override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize, tag and label raw examples.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Vocabulary word list (default: `<output stem>.vocab.txt`).
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        max_src_len: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Train the sentence selector.
    TrainSelector(TrainArgs),
    /// Train the extractor-generator.
    TrainExtgen(TrainArgs),
    /// Score and select sentences with a trained selector.
    ScoreSentences {
        #[arg(long)]
        selector_ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Predict present and absent keyphrases.
    Predict {
        #[arg(long)]
        selector_ckpt: PathBuf,
        #[arg(long)]
        extgen_ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        /// Selection threshold.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Keep absent phrases that duplicate an extracted present phrase.
        #[arg(long)]
        keep_cross_duplicates: bool,
        /// Record the copy gate per decoding step.
        #[arg(long)]
        gate_trace: bool,
    },
    /// Score predictions against gold keyphrases.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "both")]
        split: String,
        #[arg(long, default_value = "m,5")]
        k: String,
        /// Recall denominator min(|gold|, k) for fixed cutoffs.
        #[arg(long)]
        recall_cap: bool,
        /// JSON report path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Raw or preprocessed JSON lines.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Checkpoint path; metrics and config are written beside it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Existing vocabulary word list instead of building one from `--data`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => EXIT_DATA,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_INTERNAL,
    }
}

fn execute(cli: &Cli) -> Result<String> {
    match cli.global.threads {
        Some(0) => Err(Error::config("threads", "must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config("threads", e.to_string()))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<String> {
    let g = &cli.global;
    match &cli.command {
        Command::Preprocess {
            input,
            output,
            vocab,
            max_src_len,
            vocab_size,
        } => {
            let mut extra = Vec::new();
            if let Some(n) = max_src_len {
                extra.push(("max_src_len".to_string(), n.to_string()));
            }
            if let Some(n) = vocab_size {
                extra.push(("vocab_size".to_string(), n.to_string()));
            }
            let cfg = resolve(g, profile_base(g)?, extra)?;
            let docs = load_documents(input)?;
            write_jsonl(output, &docs)?;
            let v = corpus_vocab(&docs, cfg.vocab_size);
            let vocab_path = vocab.clone().unwrap_or_else(|| sibling(output, "vocab.txt"));
            std::fs::write(&vocab_path, v.to_text())?;
            write_config(output, &cfg)?;
            let mut lines: Vec<String> = docs
                .iter()
                .map(|d| format!("salience id={} labels={}", d.id, d.salience_string()))
                .collect();
            let present: usize = docs.iter().map(|d| d.present_phrases.len()).sum();
            let absent: usize = docs.iter().map(|d| d.absent_phrases.len()).sum();
            lines.push(format!(
                "preprocess documents={} vocab={} present={present} absent={absent}",
                docs.len(),
                v.len()
            ));
            Ok(lines.join("\n"))
        }
        Command::TrainSelector(args) => {
            let cfg = resolve(g, profile_base(g)?, Vec::new())?;
            let (train, val) = load_split(args)?;
            let vocab = training_vocab(args, &train, &cfg)?;
            let mut model = SelectorModel::new(&cfg, vocab)?;
            let report = train_selector(&mut model, &train, &val)?;
            let out = args.output.clone().unwrap_or_else(|| PathBuf::from("selector.ckpt"));
            save_training(&out, &model.to_checkpoint(), &report, &cfg)?;
            Ok(format!(
                "train-selector epochs={} best_epoch={} val_f1={:.4} stopped_early={}",
                report.log.len(),
                report.best_epoch,
                report.best_val,
                report.stopped_early
            ))
        }
        Command::TrainExtgen(args) => {
            let cfg = resolve(g, profile_base(g)?, Vec::new())?;
            let (train, val) = load_split(args)?;
            let vocab = training_vocab(args, &train, &cfg)?;
            let mut model = ExtGenModel::new(&cfg, vocab)?;
            let build = |docs: &[Document]| -> Result<Vec<TrainExample>> {
                docs.par_iter()
                    .map(|d| TrainExample::build(d, &model.vocab, &cfg))
                    .collect()
            };
            let (train_ex, val_ex) = (build(&train)?, build(&val)?);
            let report = train_extgen(&mut model, &train_ex, &val_ex, &LossWeights::from_config(&cfg))?;
            let out = args.output.clone().unwrap_or_else(|| PathBuf::from("extgen.ckpt"));
            save_training(&out, &model.to_checkpoint(), &report, &cfg)?;
            let final_loss = report.last().and_then(|l| l.l_eg).unwrap_or(f64::NAN);
            Ok(format!(
                "train-extgen epochs={} best_epoch={} val_loss={:.6} final_loss={final_loss:.6} stopped_early={}",
                report.log.len(),
                report.best_epoch,
                report.best_val,
                report.stopped_early
            ))
        }
        Command::ScoreSentences {
            selector_ckpt,
            input,
            output,
            budget,
            threshold,
        } => {
            let mut selector = SelectorModel::from_checkpoint(&Checkpoint::load(selector_ckpt)?)?;
            selector.cfg = resolve(g, selector.cfg.clone(), Vec::new())?;
            let mut opts = PredictOptions::from_config(&selector.cfg);
            opts.budget = budget.unwrap_or(opts.budget);
            opts.select_threshold = threshold.unwrap_or(opts.select_threshold);
            let docs = load_documents(input)?;
            let scored: Vec<ScoredDocument> = docs
                .par_iter()
                .map(|d| {
                    let probs = selector.score_document(d)?;
                    let selected = choose_sentences(d, &probs, &opts);
                    Ok(ScoredDocument {
                        id: d.id.clone(),
                        probs,
                        selected,
                    })
                })
                .collect::<Result<_>>()?;
            write_jsonl(output, &scored)?;
            write_config(output, &selector.cfg)?;
            let selected: usize = scored.iter().map(|s| s.selected.len()).sum();
            Ok(format!("score-sentences documents={} selected={selected}", scored.len()))
        }
        Command::Predict {
            selector_ckpt,
            extgen_ckpt,
            input,
            output,
            budget,
            threshold,
            max_len,
            keep_cross_duplicates,
            gate_trace,
        } => {
            let mut selector = SelectorModel::from_checkpoint(&Checkpoint::load(selector_ckpt)?)?;
            let mut extgen = ExtGenModel::from_checkpoint(&Checkpoint::load(extgen_ckpt)?)?;
            selector.cfg = resolve(g, selector.cfg.clone(), Vec::new())?;
            extgen.cfg = resolve(g, extgen.cfg.clone(), Vec::new())?;
            let mut opts = PredictOptions::from_config(&extgen.cfg);
            opts.budget = budget.unwrap_or(opts.budget);
            opts.select_threshold = threshold.unwrap_or(opts.select_threshold);
            opts.max_len = max_len.unwrap_or(opts.max_len);
            opts.cross_dedup = !keep_cross_duplicates;
            opts.gate_trace = *gate_trace;
            let docs = load_documents(input)?;
            let sets: Vec<PredictionSet> = docs
                .par_iter()
                .map(|d| predict(d, &selector, &extgen, &opts))
                .collect::<Result<_>>()?;
            write_jsonl(output, &sets)?;
            write_config(output, &extgen.cfg)?;
            let present: usize = sets.iter().map(|s| s.present.len()).sum();
            let absent: usize = sets.iter().map(|s| s.absent.len()).sum();
            Ok(format!("predict documents={} present={present} absent={absent}", sets.len()))
        }
        Command::Evaluate {
            pred,
            gold,
            split,
            k,
            recall_cap,
            output,
        } => {
            let opts = EvalOptions {
                splits: parse_splits(split)?,
                cutoffs: k.split(',').map(str::parse).collect::<Result<Vec<Cutoff>>>()?,
                recall_cap_k: *recall_cap,
            };
            let report = evaluate_files(pred, gold, &opts)?;
            if let Some(out) = output {
                std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
                write_config(out, &resolve(g, profile_base(g)?, Vec::new())?)?;
            }
            let mut lines = vec![report.table().trim_end().to_string()];
            for s in &report.splits {
                let scores: Vec<String> = s
                    .scores
                    .iter()
                    .map(|(k, prf)| format!("F1@{k}={:.3}", prf.f1))
                    .collect();
                lines.push(format!(
                    "evaluate split={} docs={} {} MAE={:.3}",
                    s.split.name(),
                    s.documents,
                    scores.join(" "),
                    s.mae
                ));
            }
            Ok(lines.join("\n"))
        }
    }
}

/// One scored document as written by `score-sentences`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub id: String,
    pub probs: Vec<f64>,
    pub selected: Vec<usize>,
}

fn profile_base(g: &GlobalArgs) -> Result<ModelConfig> {
    ModelConfig::profile(&g.profile)
}

/// Base, then the config file, then `extra`, then `--set`, then the seed.
fn resolve(g: &GlobalArgs, base: ModelConfig, extra: Vec<(String, String)>) -> Result<ModelConfig> {
    let mut pairs = extra;
    for s in &g.set {
        pairs.push(parse_override(s)?);
    }
    let seed = match g.seed {
        Some(s) => Some(s.to_string()),
        None if pairs.iter().any(|(k, _)| k == "seed") => None,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => {
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::config(SEED_ENV, format!("cannot parse `{v}`")))?;
                Some(v.trim().to_string())
            }
            Err(_) => None,
        },
    };
    if let Some(s) = seed {
        pairs.push(("seed".into(), s));
    }
    load_config_onto(base, g.config.as_deref(), &pairs)
}

/// `dir/name.jsonl` with suffix `config.txt` becomes `dir/name.config.txt`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_config(output: &Path, cfg: &ModelConfig) -> Result<()> {
    std::fs::write(sibling(output, "config.txt"), cfg.to_text())?;
    Ok(())
}

fn save_training(out: &Path, ckpt: &Checkpoint, report: &TrainReport, cfg: &ModelConfig) -> Result<()> {
    ckpt.save(out)?;
    std::fs::write(sibling(out, "metrics.csv"), report.csv())?;
    write_config(out, cfg)
}

/// Reads JSON lines holding either preprocessed documents or raw examples.
pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let rows: Vec<serde_json::Value> = read_jsonl(path)?;
    rows.into_par_iter()
        .map(|v| {
            if v.get("salience_labels").is_some() {
                Ok(serde_json::from_value::<Document>(v)?)
            } else {
                let raw: RawExample = serde_json::from_value(v)?;
                preprocess(&raw, &RuleTagger)
            }
        })
        .collect()
}

fn load_split(args: &TrainArgs) -> Result<(Vec<Document>, Vec<Document>)> {
    let train = load_documents(&args.data)?;
    if train.is_empty() {
        return Err(Error::Data(format!("{} holds no documents", args.data.display())));
    }
    let val = match &args.valid {
        Some(p) => load_documents(p)?,
        None => Vec::new(),
    };
    Ok((train, val))
}

fn training_vocab(args: &TrainArgs, train: &[Document], cfg: &ModelConfig) -> Result<Vocab> {
    match &args.vocab {
        Some(p) => Vocab::from_text(&std::fs::read_to_string(p)?),
        None => Ok(corpus_vocab(train, cfg.vocab_size)),
    }
}

fn parse_splits(s: &str) -> Result<Vec<Split>> {
    match s {
        "present" => Ok(vec![Split::Present]),
        "absent" => Ok(vec![Split::Absent]),
        "both" => Ok(vec![Split::Present, Split::Absent]),
        other => Err(Error::config("split", format!("expected present, absent or both, got `{other}`"))),
    }
}

/// Joins predictions to gold documents by id. Gold documents without a
/// prediction count as empty predictions.
pub fn evaluate_files(pred: &Path, gold: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let sets: Vec<PredictionSet> = read_jsonl(pred)?;
    let docs = load_documents(gold)?;
    let by_id: HashMap<&str, &PredictionSet> = sets.iter().map(|s| (s.id.as_str(), s)).collect();
    for s in &sets {
        if !docs.iter().any(|d| d.id == s.id) {
            log::warn!("prediction for unknown document {}", s.id);
        }
    }
    let empty: Vec<String> = Vec::new();
    let gold_strings: Vec<[Vec<String>; 2]> = docs
        .iter()
        .map(|d| {
            [
                d.present_phrases.iter().map(|p| p.tokens.join(" ")).collect(),
                d.absent_phrases.iter().map(|p| p.join(" ")).collect(),
            ]
        })
        .collect();
    let items: Vec<EvalDoc<'_>> = docs
        .iter()
        .zip(&gold_strings)
        .map(|(d, g)| {
            let pred = match by_id.get(d.id.as_str()) {
                Some(s) => [s.present.as_slice(), s.absent.as_slice()],
                None => {
                    log::warn!("no prediction for document {}", d.id);
                    [empty.as_slice(), empty.as_slice()]
                }
            };
            EvalDoc {
                id: &d.id,
                pred,
                gold: [g[0].as_slice(), g[1].as_slice()],
            }
        })
        .collect();
    evaluate(&items, opts)
}
